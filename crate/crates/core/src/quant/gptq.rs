use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Grid, QuantConfig, QuantizedWeight, Rounding};
use crate::error::{Error, Result};
use crate::linalg::{constrained_ldl, ldl_upper, ConstrainedLdl, Matrix, SymmetricPsd};

/// Rounds a clamped code coordinate `x ∈ [0, max_code]` up with probability
/// `x − ⌊x⌋`, so the expected code is `x`.
pub fn stochastic_round<R: Rng + ?Sized>(x: f64, max_code: u8, rng: &mut R) -> u8 {
    let floor = x.floor();
    let frac = x - floor;
    let u: f64 = rng.random();
    let q = if u < frac { floor + 1.0 } else { floor };
    q.clamp(0.0, max_code as f64) as u8
}

/// `c = 2 / ln(4mn/δ)`, the column cap used by the stochastic variant.
pub fn gptqs_c(m: usize, n: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(2.0 / (4.0 * (m * n) as f64 / delta).ln())
}

/// GPTQ: the fixed point `Ŵ = Q(W + (W − Ŵ)U)` with `U` from [`ldl_upper`].
pub fn gptq_quantize(w: &Matrix, h: &SymmetricPsd, cfg: &QuantConfig) -> Result<QuantizedWeight> {
    check_dims(w, h)?;
    cfg.validate(w.cols())?;
    if cfg.rounding != Rounding::Nearest {
        return Err(Error::config("GPTQ needs nearest rounding"));
    }
    let factors = ldl_upper(h)?;
    Ok(sequential_quantize(w, &factors.u, cfg))
}

/// GPTQS: stochastic rounding on the shrunk grid with corrections `L⁻¹ − I`
/// from the constrained LDL at `c = 2/ln(4mn/δ)`.
pub fn gptqs_quantize(
    w: &Matrix,
    h: &SymmetricPsd,
    cfg: &QuantConfig,
    delta: f64,
) -> Result<QuantizedWeight> {
    check_dims(w, h)?;
    if cfg.rounding != Rounding::Stochastic || cfg.grid != Grid::Shrunk {
        return Err(Error::config("GPTQS needs stochastic rounding on the shrunk grid"));
    }
    let c = gptqs_c(w.rows(), w.cols(), delta)?;
    let l = constrained_ldl(h, c)?;
    gptqs_with_ldl(w, &l, cfg)
}

/// The sequential pass of GPTQS against a precomputed constrained LDL.
///
/// Any rounding mode is accepted so that the nearest-rounding limit can be
/// compared with GPTQ on the shrunk grid.
pub fn gptqs_with_ldl(w: &Matrix, l: &ConstrainedLdl, cfg: &QuantConfig) -> Result<QuantizedWeight> {
    cfg.validate(w.cols())?;
    if l.l.rows() != w.cols() {
        return Err(Error::dims(format!(
            "factor of dimension {} for a weight with {} columns",
            l.l.rows(),
            w.cols()
        )));
    }
    Ok(sequential_quantize(w, &l.correction(), cfg))
}

fn check_dims(w: &Matrix, h: &SymmetricPsd) -> Result<()> {
    if h.dim() != w.cols() {
        return Err(Error::dims(format!(
            "Hessian of dimension {} for a weight with {} columns",
            h.dim(),
            w.cols()
        )));
    }
    Ok(())
}

/// Column-sequential quantization with residual propagation through a
/// strictly upper `correction`; rows are independent.
///
/// Column `j` quantizes `w_j + Σ_{i<j} (w_i − ŵ_i)·C_ij`, clamped into the
/// code range, against scales frozen from the uncorrected row.
pub(crate) fn sequential_quantize(w: &Matrix, correction: &Matrix, cfg: &QuantConfig) -> QuantizedWeight {
    let n = w.cols();
    let g = cfg.group_len(n);
    let max_code = cfg.max_code();
    let rows = (0..w.rows())
        .into_par_iter()
        .map(|r| {
            let row = w.row(r);
            let scales = cfg.row_scales(row);
            let mut rng = match cfg.rounding {
                Rounding::Stochastic => {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(r as u64);
                    Some(rng)
                }
                Rounding::Nearest => None,
            };
            let mut acc = vec![0.0; n];
            let mut codes = Vec::with_capacity(n);
            let mut deq = Vec::with_capacity(n);
            for j in 0..n {
                let s = scales[j / g];
                let x = cfg.code_coordinate(row[j] + acc[j], s);
                let code = match rng.as_mut() {
                    Some(rng) => stochastic_round(x, max_code, rng),
                    None => x.round() as u8,
                };
                let value = cfg.dequantize(code, s);
                let err = row[j] - value;
                if err != 0.0 {
                    let c = &correction.row(j)[j + 1..];
                    for (a, cv) in acc[j + 1..].iter_mut().zip(c) {
                        *a += err * cv;
                    }
                }
                codes.push(code);
                deq.push(value);
            }
            (codes, scales, deq)
        })
        .collect();
    QuantizedWeight::from_rows(rows, n, cfg)
}
