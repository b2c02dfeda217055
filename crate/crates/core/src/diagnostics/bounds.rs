use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{hessian_incoherence_from, weight_incoherence};
use crate::error::{Error, Result};
use crate::linalg::{
    column_norms_sq, jacobi_eigh, ldl_objective, ConstrainedLdl, EigenDecomposition, LdlFactors,
    Matrix, SymmetricPsd,
};

/// `UB = tr(H) − ‖H‖²_off / (2·tr(H))`.
pub fn ub_bound(h: &SymmetricPsd) -> Result<f64> {
    let tr = h.trace();
    if tr <= 0.0 {
        return Err(Error::Degenerate("UB of a zero-trace Hessian".into()));
    }
    Ok(tr - h.off_diag_sq() / (2.0 * tr))
}

/// Worst-case RTN error `μ_W²/(2^b−1)² · λ_max(H) · ‖W‖_F²`.
pub fn rtn_error_bound(w: &Matrix, h: &SymmetricPsd, bits: u8) -> Result<f64> {
    check_cols(w, h)?;
    let eig = jacobi_eigh(h)?;
    rtn_error_bound_with(w, eig.lambda_max(), bits)
}

/// [`rtn_error_bound`] with a known largest eigenvalue.
pub fn rtn_error_bound_with(w: &Matrix, lambda_max: f64, bits: u8) -> Result<f64> {
    if !(1..=16).contains(&bits) {
        return Err(Error::config(format!("unsupported bit width {bits}")));
    }
    let mu_w = weight_incoherence(w)?;
    let levels = ((1u32 << bits) - 1) as f64;
    Ok(mu_w * mu_w / (levels * levels) * lambda_max.max(0.0) * w.frobenius_sq())
}

/// The three high-probability GPTQS bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GptqBounds {
    /// `μ_W²/(n(2^b−3)²) · tr(H LᵀL) · ‖W‖_F² · ½·ln(2mn/δ)`.
    pub trace_bound: f64,
    /// The trace bound with `tr(H LᵀL)` replaced by `2·UB`.
    pub ub_bound: f64,
    /// `μ_H² μ_W²/(n²(2^b−3)²) · tr(H^{1/2})² · ‖W‖_F² · ln(4mn/δ)²`.
    pub incoherence_bound: f64,
}

pub fn gptq_error_bounds(
    w: &Matrix,
    h: &SymmetricPsd,
    l: &ConstrainedLdl,
    bits: u8,
    delta: f64,
) -> Result<GptqBounds> {
    check_cols(w, h)?;
    let eig = jacobi_eigh(h)?;
    gptq_error_bounds_with(w, h, l, &eig, bits, delta)
}

/// [`gptq_error_bounds`] with a precomputed eigendecomposition of `h`.
pub fn gptq_error_bounds_with(
    w: &Matrix,
    h: &SymmetricPsd,
    l: &ConstrainedLdl,
    eig: &EigenDecomposition,
    bits: u8,
    delta: f64,
) -> Result<GptqBounds> {
    check_cols(w, h)?;
    if l.l.rows() != h.dim() {
        return Err(Error::dims("constrained LDL does not match the Hessian"));
    }
    if !(3..=16).contains(&bits) {
        return Err(Error::config(format!(
            "the shrunk-grid bounds need bits >= 3, got {bits}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta must lie in (0, 1), got {delta}")));
    }
    let (m, n) = (w.rows() as f64, w.cols() as f64);
    let mu_w = weight_incoherence(w)?;
    let mu_h = hessian_incoherence_from(eig, h.trace()).mu_h;
    let frob_sq = w.frobenius_sq();
    let steps = ((1u32 << bits) - 3) as f64;
    let tr_hll = ldl_objective(h.matrix(), &l.l);
    let ub = ub_bound(h)?;

    let prefactor = mu_w * mu_w / (n * steps * steps) * frob_sq * 0.5 * (2.0 * m * n / delta).ln();
    let log4 = (4.0 * m * n / delta).ln();
    let tr_sqrt = eig.trace_sqrt();
    Ok(GptqBounds {
        trace_bound: prefactor * tr_hll,
        ub_bound: prefactor * 2.0 * ub,
        incoherence_bound: mu_h * mu_h * mu_w * mu_w / (n * n * steps * steps)
            * tr_sqrt
            * tr_sqrt
            * frob_sq
            * log4
            * log4,
    })
}

/// `μ_H² · tr(H^{1/2})² / n`, the incoherence bound on `tr(D)` without the
/// `1/min(1, c)` factor.
pub fn incoherence_trace_bound(mu_h: f64, trace_sqrt: f64, n: usize) -> f64 {
    mu_h * mu_h * trace_sqrt * trace_sqrt / n as f64
}

/// `α = min(1, √c)` from the constructive candidate.
pub fn candidate_alpha(c: f64) -> f64 {
    c.sqrt().min(1.0)
}

/// Factors that expose a unit upper triangular `L` whose column norms govern
/// the size of the sequential corrections.
pub trait CorrectionFactor {
    fn l_matrix(&self) -> Cow<'_, Matrix>;
}

impl CorrectionFactor for ConstrainedLdl {
    fn l_matrix(&self) -> Cow<'_, Matrix> {
        Cow::Borrowed(&self.l)
    }
}

impl CorrectionFactor for LdlFactors {
    fn l_matrix(&self) -> Cow<'_, Matrix> {
        Cow::Owned(self.l_inverse())
    }
}

/// `max_i ‖L eᵢ‖²`.
pub fn correction_max<F: CorrectionFactor + ?Sized>(factor: &F) -> f64 {
    column_norms_sq(&factor.l_matrix())
        .into_iter()
        .fold(0.0, f64::max)
}

fn check_cols(w: &Matrix, h: &SymmetricPsd) -> Result<()> {
    if w.cols() != h.dim() {
        return Err(Error::dims(format!(
            "weight with {} columns against a Hessian of dimension {}",
            w.cols(),
            h.dim()
        )));
    }
    Ok(())
}
