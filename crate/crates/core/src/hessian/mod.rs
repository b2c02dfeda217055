//! Calibration data, Hessian accumulation and damping, and the synthetic
//! spectrum experiment comparing bounds on `tr(D)`.

mod calibration;
mod spectrum;

pub use calibration::{
    accumulate_hessian, damp, synthetic_calibration, CalibrationSet, CalibrationSource, HessianAccumulator,
    SyntheticSpec, SYNTHETIC_BATCH_ROWS,
};
pub use spectrum::{
    bounds_experiment, bounds_row, build_spectrum_hessian, read_bounds_csv, write_bounds_csv, BoundsGrid,
    BoundsRow, Eigenbasis, Spectrum, SpectrumSpec,
};
