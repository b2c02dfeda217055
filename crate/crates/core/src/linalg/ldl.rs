//! Upper-convention LDL, `H = (U+I)·D·(U+I)ᵀ`, and the norm-capped
//! ("constrained") LDL used by the stochastic GPTQ variant.

use super::{Matrix, SymmetricPsd, PSD_TOL};
use crate::error::{Error, Result};

/// Pivots below this fraction of their original diagonal entry are treated as
/// exact zeros of a semidefinite matrix.
const ZERO_PIVOT_REL: f64 = 1e-12;
const CLDL_MAX_PASSES: usize = 200;
const CLDL_REL_TOL: f64 = 1e-9;
/// Slack on the column-norm constraint.
pub const CONSTRAINT_SLACK: f64 = 1e-10;

/// Factors of `H = (U+I)·diag(d)·(U+I)ᵀ`, `U` strictly upper triangular.
#[derive(Clone, Debug)]
pub struct LdlFactors {
    pub u: Matrix,
    pub d: Vec<f64>,
}

impl LdlFactors {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// `U + I`.
    pub fn unit_upper(&self) -> Matrix {
        let mut m = self.u.clone();
        for i in 0..self.dim() {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// `L = (U+I)⁻¹`, the unconstrained minimizer of `tr(H LᵀL)`.
    pub fn l_inverse(&self) -> Matrix {
        unit_upper_inverse(&self.unit_upper())
    }

    pub fn trace_d(&self) -> f64 {
        self.d.iter().sum()
    }

    pub fn reconstruct(&self) -> Matrix {
        let t = self.unit_upper();
        let mut td = t.clone();
        for i in 0..self.dim() {
            for (j, d) in self.d.iter().enumerate() {
                td[(i, j)] *= d;
            }
        }
        td.matmul_t(&t)
    }
}

/// Inverse of a unit upper triangular matrix (also unit upper triangular).
pub fn unit_upper_inverse(t: &Matrix) -> Matrix {
    let n = t.rows();
    let mut x = Matrix::identity(n);
    for j in 0..n {
        for i in (0..j).rev() {
            let mut s = 0.0;
            for k in (i + 1)..=j {
                s += t[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = -s;
        }
    }
    x
}

/// Upper LDL of a PSD matrix.
///
/// The matrix is index-reversed, factored with a root-free Cholesky
/// (`A = L'·D'·L'ᵀ`, `L'` unit lower), and reversed back, which turns `L'`
/// into `U + I`. Zero pivots of singular PSD input give `d = 0` with a zero
/// multiplier column; a pivot below `−1e−8·tr(H)` fails with its index in the
/// original ordering.
pub fn ldl_upper(h: &SymmetricPsd) -> Result<LdlFactors> {
    let n = h.dim();
    let src = h.matrix();
    let rev = |i: usize| n - 1 - i;
    let a = Matrix::from_fn(n, n, |i, j| src[(rev(i), rev(j))]);
    let neg_tol = PSD_TOL * h.trace().abs();

    let mut l = Matrix::identity(n);
    let mut d = vec![0.0; n];
    // w[k] = L[j][k]·d[k] for the current column j
    let mut w = vec![0.0; n];
    for j in 0..n {
        let lj = l.row(j);
        let mut pivot = a[(j, j)];
        for k in 0..j {
            w[k] = lj[k] * d[k];
            pivot -= lj[k] * w[k];
        }
        if pivot < -neg_tol {
            return Err(Error::Indefinite {
                index: rev(j),
                value: pivot,
            });
        }
        if pivot <= ZERO_PIVOT_REL * a[(j, j)].abs() {
            d[j] = 0.0;
            continue;
        }
        d[j] = pivot;
        for i in (j + 1)..n {
            let li = l.row(i);
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= li[k] * w[k];
            }
            l[(i, j)] = s / pivot;
        }
    }

    let u = Matrix::from_fn(n, n, |i, j| if j > i { l[(rev(i), rev(j))] } else { 0.0 });
    let d = (0..n).map(|i| d[rev(i)]).collect();
    Ok(LdlFactors { u, d })
}

/// Solution of: minimize `tr(H LᵀL)` over unit upper triangular `L` subject to
/// `‖L eᵢ‖² ≤ 1 + c` for every column.
#[derive(Clone, Debug)]
pub struct ConstrainedLdl {
    pub l: Matrix,
    pub c: f64,
    pub objective: f64,
}

impl ConstrainedLdl {
    /// `‖L eᵢ‖²` for every column.
    pub fn column_norms_sq(&self) -> Vec<f64> {
        column_norms_sq(&self.l)
    }

    /// `L⁻¹ − I`, the strictly upper correction matrix of the sequential quantizer.
    pub fn correction(&self) -> Matrix {
        let mut m = unit_upper_inverse(&self.l);
        for i in 0..m.rows() {
            m[(i, i)] = 0.0;
        }
        m
    }

    pub fn is_feasible(&self) -> bool {
        self.column_norms_sq()
            .iter()
            .all(|v| *v <= 1.0 + self.c + CONSTRAINT_SLACK)
    }
}

pub fn column_norms_sq(l: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; l.cols()];
    for row in l.rows_iter() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v * v;
        }
    }
    out
}

/// `tr(H LᵀL) = tr(L H Lᵀ)`.
pub fn ldl_objective(h: &Matrix, l: &Matrix) -> f64 {
    let lh = l.matmul(h);
    l.rows_iter()
        .zip(lh.rows_iter())
        .map(|(a, b)| super::dot(a, b))
        .sum()
}

/// The feasible point `I − (α/tr H)·H_U`, `α = min(1, √c)`, with `H_U` the
/// strictly upper part of `H`.
pub fn constrained_ldl_candidate(h: &SymmetricPsd, c: f64) -> Matrix {
    let n = h.dim();
    let alpha = c.sqrt().min(1.0);
    let tr = h.trace();
    let hu = h.matrix().strict_upper();
    Matrix::identity(n).sub(&hu.scale(alpha / tr))
}

/// Constrained LDL by exact block-coordinate descent over the columns of `L`.
///
/// If the true LDL inverse already satisfies the caps it is returned as is.
/// Otherwise the solver starts at [`constrained_ldl_candidate`]; each column
/// subproblem is an isotropic quadratic over a norm ball and is solved in
/// closed form, so the objective never increases. Passes stop once the
/// relative change falls below `1e−9` or after 200 passes.
pub fn constrained_ldl(h: &SymmetricPsd, c: f64) -> Result<ConstrainedLdl> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::config(format!(
            "constrained LDL needs c > 0, got {c}"
        )));
    }
    let tr = h.trace();
    if tr <= 0.0 {
        return Err(Error::Degenerate("constrained LDL of a zero-trace matrix".into()));
    }
    let factors = ldl_upper(h)?;
    let l_true = factors.l_inverse();
    if column_norms_sq(&l_true)
        .iter()
        .all(|v| *v <= 1.0 + c + CONSTRAINT_SLACK)
    {
        let objective = ldl_objective(h.matrix(), &l_true);
        return Ok(ConstrainedLdl {
            l: l_true,
            c,
            objective,
        });
    }

    let hm = h.matrix();
    let n = h.dim();
    let mut l = constrained_ldl_candidate(h, c);
    let mut lh = l.matmul(hm);
    let mut prev = ldl_objective(hm, &l);
    let radius = c.sqrt();
    let mut g = vec![0.0; n];
    for _ in 0..CLDL_MAX_PASSES {
        for i in 1..n {
            let hii = hm[(i, i)];
            for r in 0..i {
                g[r] = lh[(r, i)] - hii * l[(r, i)];
            }
            let gn = g[..i].iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if hii > 0.0 && gn / hii <= radius {
                -1.0 / hii
            } else if gn > 0.0 {
                -radius / gn
            } else {
                0.0
            };
            let hi = hm.row(i).to_vec();
            for r in 0..i {
                let new = scale * g[r];
                let delta = new - l[(r, i)];
                if delta != 0.0 {
                    l[(r, i)] = new;
                    super::axpy(delta, &hi, lh.row_mut(r));
                }
            }
        }
        let obj = ldl_objective(hm, &l);
        let rel = (prev - obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        prev = obj;
        if rel < CLDL_REL_TOL {
            break;
        }
        // refresh the running product against drift
        lh = l.matmul(hm);
    }
    Ok(ConstrainedLdl {
        objective: ldl_objective(hm, &l),
        l,
        c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn psd(rows: &[[f64; 2]]) -> SymmetricPsd {
        SymmetricPsd::new(Matrix::from_rows(rows)).unwrap()
    }

    fn random_psd(n: usize, samples: usize, seed: u64) -> SymmetricPsd {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::gaussian(samples, n, 1.0, &mut rng);
        SymmetricPsd::new(x.t_matmul(&x)).unwrap()
    }

    #[test]
    fn diagonal_factors() {
        let f = ldl_upper(&SymmetricPsd::from_diag(&[3.0, 5.0]).unwrap()).unwrap();
        assert_eq!(f.d, vec![3.0, 5.0]);
        assert_eq!(f.u, Matrix::zeros(2, 2));
    }

    #[test]
    fn two_by_two_hand_expansion() {
        // (U+I) D (U+I)ᵀ with U12 = 1, d = (1, 1) gives [[2,1],[1,1]]
        let f = ldl_upper(&psd(&[[2.0, 1.0], [1.0, 1.0]])).unwrap();
        assert!((f.u[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((f.d[0] - 1.0).abs() < 1e-15 && (f.d[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn semidefinite_sharpness_matrix() {
        let eps = 1e-3;
        let f = ldl_upper(&psd(&[[eps * eps, eps], [eps, 1.0]])).unwrap();
        assert_eq!(f.d[0], 0.0);
        assert!((f.d[1] - 1.0).abs() < 1e-15);
        assert!((f.trace_d() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn indefinite_reports_pivot() {
        let err = ldl_upper(&psd(&[[1.0, 2.0], [2.0, 1.0]])).unwrap_err();
        // reversed order factors index 1 first, so index 0 fails
        assert!(matches!(err, Error::Indefinite { index: 0, .. }));
    }

    #[test]
    fn reconstruction_random_psd() {
        for seed in 0..100u64 {
            let n = 1 + (seed as usize * 13) % 128;
            let h = random_psd(n, n + 3, seed);
            let f = ldl_upper(&h).unwrap();
            let rel = f.reconstruct().sub(h.matrix()).frobenius() / h.matrix().frobenius();
            assert!(rel <= 1e-8, "n={n} seed={seed} rel={rel}");
            assert!(f.d.iter().all(|d| *d >= 0.0));
        }
    }

    #[test]
    fn rank_deficient_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::gaussian(4, 10, 1.0, &mut rng);
        let h = SymmetricPsd::new(x.t_matmul(&x)).unwrap();
        let f = ldl_upper(&h).unwrap();
        let rel = f.reconstruct().sub(h.matrix()).frobenius() / h.matrix().frobenius();
        assert!(rel <= 1e-8, "rel={rel}");
        assert_eq!(f.d.iter().filter(|d| **d == 0.0).count(), 6);
    }

    #[test]
    fn constrained_diagonal_is_identity() {
        let h = SymmetricPsd::from_diag(&[1.0, 2.0, 3.0]).unwrap();
        for c in [1e-3, 0.5, 10.0] {
            let cl = constrained_ldl(&h, c).unwrap();
            assert_eq!(cl.l, Matrix::identity(3));
            assert!((cl.objective - 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn constrained_large_c_is_true_ldl() {
        let h = psd(&[[2.0, 1.0], [1.0, 1.0]]);
        let cl = constrained_ldl(&h, 1e6).unwrap();
        let f = ldl_upper(&h).unwrap();
        assert_eq!(cl.l, f.l_inverse());
        assert!((cl.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constrained_small_c_beats_both_candidates() {
        let h = psd(&[[2.0, 1.0], [1.0, 1.0]]);
        let cl = constrained_ldl(&h, 0.25).unwrap();
        // upper candidate I − (0.5/3)·H_U and the lower-triangular variant
        let upper = Matrix::identity(2).sub(&h.matrix().strict_upper().scale(0.5 / 3.0));
        let lower = Matrix::identity(2).sub(&h.matrix().strict_lower().scale(0.5 / 3.0));
        let f_upper = ldl_objective(h.matrix(), &upper);
        let f_lower = ldl_objective(h.matrix(), &lower);
        assert!((f_upper - 97.0 / 36.0).abs() < 1e-12);
        assert!((f_lower - 98.0 / 36.0).abs() < 1e-12);
        assert!(cl.objective <= f_upper && cl.objective <= f_lower);
        // closed form: L = [[1, y], [0, 1]], objective 3 + 2y + y², |y| ≤ 1/2
        assert!((cl.objective - 2.25).abs() < 1e-12);
        assert!(cl.is_feasible());
    }

    #[test]
    fn constrained_rejects_bad_input() {
        let h = psd(&[[2.0, 1.0], [1.0, 1.0]]);
        assert!(constrained_ldl(&h, 0.0).is_err());
        assert!(constrained_ldl(&SymmetricPsd::new(Matrix::zeros(2, 2)).unwrap(), 1.0).is_err());
        assert!(constrained_ldl(&psd(&[[1.0, 2.0], [2.0, 1.0]]), 1.0).is_err());
    }

    #[test]
    fn unit_upper_inverse_roundtrip() {
        let t = Matrix::from_rows(&[[1.0, 2.0, -1.0], [0.0, 1.0, 0.5], [0.0, 0.0, 1.0]]);
        let inv = unit_upper_inverse(&t);
        assert!(t.matmul(&inv).sub(&Matrix::identity(3)).max_abs() < 1e-15);
    }
}
