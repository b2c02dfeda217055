//! Scalar weight quantizers: grouped RTN, GPTQ, the stochastic GPTQS variant
//! and an exhaustive oracle for tiny rows.

mod brute;
mod config;
mod gptq;
mod rtn;

pub use brute::brute_force_optimal;
pub use config::{Grid, QuantConfig, QuantizedWeight, Rounding, SCALE_FLOOR};
pub use gptq::{gptq_quantize, gptqs_c, gptqs_quantize, gptqs_with_ldl, stochastic_round};
pub use rtn::{rtn_quantize, rtn_with_scales};
