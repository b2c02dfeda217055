//! Incoherences, layerwise error, the RTN/GPTQS error bounds, UB, SNR and the
//! KL proxy.

mod bounds;
mod incoherence;
mod metrics;
mod report;

pub use bounds::{
    correction_max, gptq_error_bounds, gptq_error_bounds_with, incoherence_trace_bound,
    candidate_alpha, rtn_error_bound, rtn_error_bound_with, ub_bound, CorrectionFactor, GptqBounds,
};
pub use incoherence::{
    hessian_incoherence, hessian_incoherence_from, weight_incoherence, HessianIncoherence,
    DEGENERACY_REL_GAP,
};
pub use metrics::{kl_proxy, layerwise_error, snr_db, Snr};
pub use report::{read_reports_csv, write_reports_csv, write_reports_json, BoundReport, HessianStats};
