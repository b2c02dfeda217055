use rayon::prelude::*;

use super::{QuantConfig, QuantizedWeight, Rounding};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Grouped round-to-nearest, `Ŵ = g⁻¹(h(g(W; s)); s)` with `s` the group max-abs.
pub fn rtn_quantize(w: &Matrix, cfg: &QuantConfig) -> Result<QuantizedWeight> {
    cfg.validate(w.cols())?;
    if cfg.rounding != Rounding::Nearest {
        return Err(Error::config("RTN needs nearest rounding"));
    }
    let scales = cfg.scales(w);
    rtn_with_scales(w, &scales, cfg)
}

/// Round-to-nearest against fixed scales (`rows × groups`).
pub fn rtn_with_scales(w: &Matrix, scales: &Matrix, cfg: &QuantConfig) -> Result<QuantizedWeight> {
    cfg.validate(w.cols())?;
    if scales.shape() != (w.rows(), cfg.groups_per_row(w.cols())) {
        return Err(Error::dims("scale matrix does not match weight and group size"));
    }
    let g = cfg.group_len(w.cols());
    let rows = (0..w.rows())
        .into_par_iter()
        .map(|i| {
            let s = scales.row(i);
            let mut codes = Vec::with_capacity(w.cols());
            let mut deq = Vec::with_capacity(w.cols());
            for (j, &x) in w.row(i).iter().enumerate() {
                let code = cfg.nearest_code(x, s[j / g]);
                codes.push(code);
                deq.push(cfg.dequantize(code, s[j / g]));
            }
            (codes, s.to_vec(), deq)
        })
        .collect();
    Ok(QuantizedWeight::from_rows(rows, w.cols(), cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::Grid;
    use proptest::prelude::*;

    #[test]
    fn hand_composed_example() {
        // s = 1, b = 2: g(0.4) = 1.5·1.4 = 2.1 → code 2 → 2·2/3 − 1 = 1/3
        let w = Matrix::from_rows(&[[0.4, -1.0, 1.0]]);
        let q = rtn_quantize(&w, &QuantConfig::nearest(2)).unwrap();
        assert_eq!(q.codes, vec![2, 0, 3]);
        let d = q.dequantized.row(0);
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(d[1], -1.0);
        assert_eq!(d[2], 1.0);
    }

    #[test]
    fn grid_points_are_fixed() {
        // b = 3, s = 1: levels are 2q/7 − 1
        let row: Vec<f64> = [0u8, 1, 3, 4, 6, 7].iter().map(|&q| 2.0 * q as f64 / 7.0 - 1.0).collect();
        let w = Matrix::from_rows(std::slice::from_ref(&row));
        let q = rtn_quantize(&w, &QuantConfig::nearest(3)).unwrap();
        for (a, b) in q.dequantized.row(0).iter().zip(&row) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_group_uses_floor() {
        let w = Matrix::from_rows(&[[0.0, 0.0, 1.0, -0.5]]);
        let q = rtn_quantize(&w, &QuantConfig::nearest(4).with_group_size(2)).unwrap();
        assert_eq!(q.scales.row(0), &[crate::quant::SCALE_FLOOR, 1.0]);
        assert!(q.dequantized.row(0)[..2].iter().all(|v| v.abs() <= crate::quant::SCALE_FLOOR));
    }

    #[test]
    fn rejects_bad_configs() {
        let w = Matrix::zeros(2, 6);
        assert!(rtn_quantize(&w, &QuantConfig::nearest(1)).is_err());
        assert!(rtn_quantize(&w, &QuantConfig::nearest(9)).is_err());
        assert!(rtn_quantize(&w, &QuantConfig::nearest(4).with_group_size(4)).is_err());
        assert!(rtn_quantize(&w, &QuantConfig::stochastic(4, 0)).is_err());
    }

    proptest! {
        #[test]
        fn per_element_error_and_idempotence(
            bits in 2u8..=8,
            group in prop::sample::select(vec![0usize, 2, 4, 8]),
            shrunk in any::<bool>(),
            vals in prop::collection::vec(-10.0f64..10.0, 24),
        ) {
            let bits = if shrunk { bits.max(3) } else { bits };
            let grid = if shrunk { Grid::Shrunk } else { Grid::Standard };
            let cfg = QuantConfig { bits, group_size: group, grid, ..QuantConfig::nearest(bits) };
            let w = Matrix::from_vec(3, 8, vals).unwrap();
            let q = rtn_quantize(&w, &cfg).unwrap();
            let levels = ((1u32 << bits) - 1) as f64;
            let step = if shrunk { levels - 2.0 } else { levels };
            let g = cfg.group_len(8);
            for i in 0..3 {
                for j in 0..8 {
                    let s = q.scales[(i, j / g)];
                    let err = (q.dequantized[(i, j)] - w[(i, j)]).abs();
                    prop_assert!(err <= s / step * (1.0 + 1e-12) + 1e-15);
                    prop_assert!(q.code(i, j) <= cfg.max_code());
                }
            }
            let again = rtn_quantize(&q.dequantized, &cfg).unwrap();
            prop_assert_eq!(&again.codes, &q.codes);
        }
    }
}
