use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerical core and the file formats it owns.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (relative defect {defect:.3e})")]
    NotSymmetric { defect: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("factorization failed: negative pivot {value:.3e} at index {index}")]
    Indefinite { index: usize, value: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal residual {residual:.3e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("singular linear system")]
    Singular,

    #[error("non-finite value in input")]
    NonFinite,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("exhaustive search space of {0} assignments exceeds the 2^20 limit")]
    SearchSpaceTooLarge(u128),

    #[error("objective needs a Hessian for layer {layer} ({role})")]
    MissingHessian { layer: usize, role: String },

    #[error("archive format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// Failures that come from the numerics rather than from inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPsd { .. }
                | Error::Indefinite { .. }
                | Error::NoConvergence { .. }
                | Error::Singular
                | Error::NonFinite
                | Error::Degenerate(_)
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Format { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
