//! Deterministic dense linear algebra: Hadamard constructions, the fast
//! Walsh–Hadamard transform, Jacobi eigendecomposition, upper-convention LDL,
//! constrained LDL and orthogonal sampling.

mod eigen;
mod hadamard;
mod ldl;
mod matrix;
mod orthogonal;
mod psd;

pub use eigen::{jacobi_eigh, EigenDecomposition, JACOBI_MAX_SWEEPS, JACOBI_REL_TOL};
pub use hadamard::{fwht_in_place, hadamard_orthonormal, random_signs, randomized_hadamard};
pub use ldl::{
    column_norms_sq, constrained_ldl, constrained_ldl_candidate, ldl_objective, ldl_upper,
    unit_upper_inverse, ConstrainedLdl, LdlFactors, CONSTRAINT_SLACK,
};
pub use matrix::{axpy, dot, Matrix};
pub use orthogonal::{random_orthogonal, solve};
pub use psd::{SymmetricPsd, PSD_TOL, SYMMETRY_TOL};
