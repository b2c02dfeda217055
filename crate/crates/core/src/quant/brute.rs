use super::QuantConfig;
use crate::error::{Error, Result};
use crate::linalg::SymmetricPsd;

const MAX_ASSIGNMENTS: u128 = 1 << 20;

/// Exhaustive minimizer of `(ŵ − w)ᵀ H (ŵ − w)` over all code assignments of
/// one row, with the row's scales fixed as in RTN.
///
/// Ties keep the lexicographically first assignment.
pub fn brute_force_optimal(w_row: &[f64], h: &SymmetricPsd, cfg: &QuantConfig) -> Result<(Vec<u8>, f64)> {
    let n = w_row.len();
    if h.dim() != n {
        return Err(Error::dims(format!(
            "Hessian of dimension {} for a row of length {n}",
            h.dim()
        )));
    }
    cfg.validate(n)?;
    let levels = 1usize << cfg.bits;
    let total = (levels as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if total > MAX_ASSIGNMENTS {
        return Err(Error::SearchSpaceTooLarge(total));
    }

    let scales = cfg.row_scales(w_row);
    let g = cfg.group_len(n);
    // errors[j][q] = dequantized level q minus w_j
    let errors: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            (0..levels)
                .map(|q| cfg.dequantize(q as u8, scales[j / g]) - w_row[j])
                .collect()
        })
        .collect();
    let hm = h.matrix();

    let mut codes = vec![0usize; n];
    let mut e = vec![0.0; n];
    let mut best = (vec![0u8; n], f64::INFINITY);
    loop {
        for j in 0..n {
            e[j] = errors[j][codes[j]];
        }
        let mut err = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for (j, ej) in e.iter().enumerate() {
                s += hm[(i, j)] * ej;
            }
            err += e[i] * s;
        }
        if err < best.1 {
            best = (codes.iter().map(|&c| c as u8).collect(), err);
        }
        // odometer increment, last coordinate fastest
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(best);
            }
            k -= 1;
            codes[k] += 1;
            if codes[k] < levels {
                break;
            }
            codes[k] = 0;
        }
    }
}
