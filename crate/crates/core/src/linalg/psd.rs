use super::{jacobi_eigh, Matrix};
use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted on construction.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalues down to `-PSD_TOL · tr(H)` count as zero.
pub const PSD_TOL: f64 = 1e-8;

/// A square symmetric matrix that is positive semidefinite up to tolerance.
///
/// Construction checks shape and symmetry and stores the exact symmetrization;
/// the eigenvalue check is on demand ([`SymmetricPsd::verify_psd`]) because
/// it costs an eigendecomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricPsd {
    matrix: Matrix,
    symmetry_defect: f64,
}

impl SymmetricPsd {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        if !matrix.all_finite() {
            return Err(Error::NonFinite);
        }
        let defect = matrix.symmetry_defect();
        if defect > SYMMETRY_TOL {
            return Err(Error::NotSymmetric { defect });
        }
        Ok(SymmetricPsd {
            matrix: matrix.symmetrized(),
            symmetry_defect: defect,
        })
    }

    /// Like [`SymmetricPsd::new`] followed by [`SymmetricPsd::verify_psd`].
    pub fn new_verified(matrix: Matrix) -> Result<Self> {
        let h = SymmetricPsd::new(matrix)?;
        h.verify_psd()?;
        Ok(h)
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        SymmetricPsd::new(Matrix::from_diag(diag))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn symmetry_defect(&self) -> f64 {
        self.symmetry_defect
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn off_diag_sq(&self) -> f64 {
        self.matrix.off_diag_sq()
    }

    pub fn is_diagonal(&self) -> bool {
        self.off_diag_sq() == 0.0
    }

    /// Checks `λ_min ≥ −1e−8·tr(H)` and returns the minimum eigenvalue.
    pub fn verify_psd(&self) -> Result<f64> {
        let eig = jacobi_eigh(self)?;
        let min = eig.lambdas.last().copied().unwrap_or(0.0);
        if min < -PSD_TOL * self.trace().abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(min)
    }

    /// `Pᵀ H P`, which stays symmetric PSD for any square `P`.
    pub fn conjugate_by(&self, p: &Matrix) -> Result<Self> {
        if p.rows() != self.dim() {
            return Err(Error::dims(format!(
                "conjugating a {0}x{0} Hessian by a {1}x{2} matrix",
                self.dim(),
                p.rows(),
                p.cols()
            )));
        }
        Ok(SymmetricPsd {
            matrix: self.matrix.conjugate_by(p).symmetrized(),
            symmetry_defect: 0.0,
        })
    }
}

impl AsRef<Matrix> for SymmetricPsd {
    fn as_ref(&self) -> &Matrix {
        &self.matrix
    }
}
