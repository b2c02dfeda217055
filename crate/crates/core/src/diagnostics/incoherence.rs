use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigh, EigenDecomposition, Matrix, SymmetricPsd};

/// Adjacent sorted eigenvalues closer than this fraction of `tr(H)` make the
/// eigenbasis, and hence `μ_H`, ambiguous.
pub const DEGENERACY_REL_GAP: f64 = 1e-8;

/// `μ_W = √(mn)·max|W| / ‖W‖_F`, at least 1.
pub fn weight_incoherence(w: &Matrix) -> Result<f64> {
    let frob = w.frobenius();
    if frob == 0.0 || w.as_slice().is_empty() {
        return Err(Error::Degenerate("weight incoherence of an all-zero matrix".into()));
    }
    let mn = (w.rows() * w.cols()) as f64;
    Ok(mn.sqrt() * w.max_abs() / frob)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianIncoherence {
    pub mu_h: f64,
    /// Set when the spectrum has (near-)repeated eigenvalues, in which case
    /// `mu_h` depends on the eigenbasis the solver happened to return.
    pub degenerate: bool,
}

/// `μ_H = √n·max|Q_ij|` over the eigenvectors of `H`.
pub fn hessian_incoherence(h: &SymmetricPsd) -> Result<HessianIncoherence> {
    let eig = jacobi_eigh(h)?;
    Ok(hessian_incoherence_from(&eig, h.trace()))
}

/// [`hessian_incoherence`] from an existing decomposition.
pub fn hessian_incoherence_from(eig: &EigenDecomposition, trace: f64) -> HessianIncoherence {
    let n = eig.lambdas.len() as f64;
    let gap = DEGENERACY_REL_GAP * trace.abs();
    let degenerate = eig.lambdas.windows(2).any(|w| (w[0] - w[1]).abs() < gap);
    HessianIncoherence {
        mu_h: n.sqrt() * eig.q_max(),
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hadamard_orthonormal;

    #[test]
    fn weight_examples() {
        assert_eq!(weight_incoherence(&Matrix::from_fn(3, 5, |_, _| -0.7)).unwrap(), 1.0);
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(weight_incoherence(&w).unwrap(), 2.0);
        assert!(weight_incoherence(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn hessian_examples() {
        let q = hadamard_orthonormal(4).unwrap();
        let h = q.matmul(&Matrix::from_diag(&[4.0, 3.0, 2.0, 1.0])).matmul_t(&q);
        let inc = hessian_incoherence(&SymmetricPsd::new(h).unwrap()).unwrap();
        assert!((inc.mu_h - 1.0).abs() < 1e-8);
        assert!(!inc.degenerate);

        let inc = hessian_incoherence(&SymmetricPsd::from_diag(&[3.0, 2.0, 1.0]).unwrap()).unwrap();
        assert!((inc.mu_h - 3f64.sqrt()).abs() < 1e-12);

        let inc = hessian_incoherence(&SymmetricPsd::from_diag(&[1.0; 4]).unwrap()).unwrap();
        assert!(inc.degenerate);
    }
}
