//! Rotation-aware post-training quantization toolkit.
//!
//! The crate covers the full loop for weight-only quantization of a
//! transformer-style linear stack:
//!
//! * [`linalg`]: dense kernels (Hadamard/FWHT, Jacobi, LDL, constrained LDL).
//! * [`quant`]: RTN, GPTQ and the stochastic GPTQ variant, plus an exhaustive oracle.
//! * [`diagnostics`]: incoherence measures, layerwise error, error bounds, SNR.
//! * [`rotation`]: rotation-learning objectives and Cayley SGD on the orthogonal group.
//! * [`model`]: a toy pre-norm block stack with fused rotations and the
//!   rotate → calibrate → quantize pipeline.
//! * [`hessian`]: calibration data, Hessian accumulation and the spectrum experiment.
//! * [`archive`]: the on-disk tensor archive shared by all artifacts.

pub mod archive;
pub mod diagnostics;
pub mod error;
pub mod hessian;
pub mod linalg;
pub mod model;
pub mod quant;
pub mod rotation;

pub use error::{Error, Result};
pub use linalg::{Matrix, SymmetricPsd};
