//! Cyclic Jacobi eigensolver for symmetric matrices, using the round-robin
//! ordering so each round applies disjoint rotations in two passes.

use super::{Matrix, SymmetricPsd};
use crate::error::{Error, Result};

pub const JACOBI_MAX_SWEEPS: usize = 100;
pub const JACOBI_REL_TOL: f64 = 1e-12;

/// `H = Q · diag(λ) · Qᵀ` with eigenvalues sorted descending and the columns
/// of `Q` matched to them.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub q: Matrix,
    pub lambdas: Vec<f64>,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> Matrix {
        let n = self.lambdas.len();
        let mut scaled = self.q.clone();
        for i in 0..n {
            for (j, l) in self.lambdas.iter().enumerate() {
                scaled[(i, j)] *= l;
            }
        }
        scaled.matmul_t(&self.q)
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambdas.first().copied().unwrap_or(0.0)
    }

    /// `max |Q_ij|`.
    pub fn q_max(&self) -> f64 {
        self.q.max_abs()
    }

    /// `tr(H^{1/2}) = Σ √λᵢ` with negative round-off clamped to zero.
    pub fn trace_sqrt(&self) -> f64 {
        self.lambdas.iter().map(|l| l.max(0.0).sqrt()).sum()
    }
}

struct Rotation {
    p: usize,
    q: usize,
    c: f64,
    s: f64,
    app: f64,
    aqq: f64,
}

/// Rows `p` and `q` of `Jᵀ M` for one Givens rotation.
fn rotate_rows(m: &mut [f64], n: usize, rot: &Rotation) {
    let (head, tail) = m.split_at_mut(rot.q * n);
    let rp = &mut head[rot.p * n..(rot.p + 1) * n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = rot.c * xp - rot.s * xq;
        *y = rot.s * xp + rot.c * xq;
    }
}

/// Disjoint pairs `(p, q)` with `p < q` of one round of the circle method;
/// rounds `0..players−1` cover every pair exactly once.
fn round_robin_pairs(players: usize, round: usize) -> impl Iterator<Item = (usize, usize)> {
    let m = players - 1;
    (0..players / 2).map(move |k| {
        let (i, j) = if k == 0 {
            (m, round)
        } else {
            ((round + k) % m, (round + m - k) % m)
        };
        (i.min(j), i.max(j))
    })
}

fn off_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi sweeps until the off-diagonal Frobenius norm drops below
/// `1e−12·‖H‖_F`, failing with the residual after 100 sweeps.
pub fn jacobi_eigh(h: &SymmetricPsd) -> Result<EigenDecomposition> {
    let h = h.matrix();
    if !h.is_square() {
        return Err(Error::NotSquare {
            rows: h.rows(),
            cols: h.cols(),
        });
    }
    let n = h.rows();
    let mut a = h.symmetrized().into_vec();
    // rows of `vt` are the eigenvectors, so rotations touch contiguous memory
    let mut vt = Matrix::identity(n).into_vec();
    let norm = h.frobenius();
    let target = JACOBI_REL_TOL * norm;
    let skip = 1e-18 * norm / (n.max(1) as f64);

    // round-robin ordering over an even number of players; index n is a bye
    let players = n + n % 2;
    let mut rotations = Vec::with_capacity(players / 2);
    let mut converged = off_norm(&a, n) <= target;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                residual: off_norm(&a, n) / norm.max(f64::MIN_POSITIVE),
            });
        }
        sweeps += 1;
        for round in 0..players.saturating_sub(1) {
            rotations.clear();
            for (p, q) in round_robin_pairs(players, round) {
                if q >= n {
                    continue;
                }
                let apq = a[p * n + q];
                if apq.abs() <= skip {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                rotations.push(Rotation {
                    p,
                    q,
                    c,
                    s: t * c,
                    app: app - t * apq,
                    aqq: aqq + t * apq,
                });
            }
            // the pairs are disjoint, so all of them can be applied at once:
            // Jᵀ A row-wise, then A J column-wise within each row
            for rot in &rotations {
                rotate_rows(&mut a, n, rot);
                rotate_rows(&mut vt, n, rot);
            }
            for row in a.chunks_exact_mut(n.max(1)) {
                for rot in &rotations {
                    let (xp, xq) = (row[rot.p], row[rot.q]);
                    row[rot.p] = rot.c * xp - rot.s * xq;
                    row[rot.q] = rot.s * xp + rot.c * xq;
                }
            }
            for rot in &rotations {
                a[rot.p * n + rot.p] = rot.app;
                a[rot.q * n + rot.q] = rot.aqq;
                a[rot.p * n + rot.q] = 0.0;
                a[rot.q * n + rot.p] = 0.0;
            }
        }
        converged = off_norm(&a, n) <= target;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let lambdas = order.iter().map(|&i| a[i * n + i]).collect();
    let q = Matrix::from_fn(n, n, |row, col| vt[order[col] * n + row]);
    Ok(EigenDecomposition { q, lambdas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hadamard_orthonormal, random_orthogonal};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_robin_covers_every_pair_once() {
        for players in [2, 4, 6, 10] {
            let mut seen = std::collections::BTreeSet::new();
            for round in 0..players - 1 {
                let mut used = vec![false; players];
                for (p, q) in round_robin_pairs(players, round) {
                    assert!(p < q && !used[p] && !used[q]);
                    used[p] = true;
                    used[q] = true;
                    assert!(seen.insert((p, q)));
                }
            }
            assert_eq!(seen.len(), players * (players - 1) / 2);
        }
    }

    #[test]
    fn diagonal_input() {
        let h = SymmetricPsd::from_diag(&[2.0, 5.0]).unwrap();
        let e = jacobi_eigh(&h).unwrap();
        assert_eq!(e.lambdas, vec![5.0, 2.0]);
        // columns are basis vectors up to sign, matched to (5, 2)
        assert_eq!(e.q[(1, 0)].abs(), 1.0);
        assert_eq!(e.q[(0, 1)].abs(), 1.0);
    }

    #[test]
    fn recovers_hadamard_eigenbasis() {
        let q0 = hadamard_orthonormal(2).unwrap();
        let h = q0.matmul(&Matrix::from_diag(&[4.0, 1.0])).matmul_t(&q0);
        let e = jacobi_eigh(&SymmetricPsd::new(h).unwrap()).unwrap();
        assert!((e.lambdas[0] - 4.0).abs() < 1e-12 && (e.lambdas[1] - 1.0).abs() < 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                assert!((e.q[(i, j)].abs() - q0[(i, j)].abs()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reconstructs_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Matrix::gaussian(40, 32, 1.0, &mut rng);
        let h = SymmetricPsd::new(x.t_matmul(&x)).unwrap();
        let e = jacobi_eigh(&h).unwrap();
        let rel = e.reconstruct().sub(h.matrix()).frobenius() / h.matrix().frobenius();
        assert!(rel <= 1e-9, "reconstruction error {rel}");
        assert!(e.q.orthogonality_defect() <= 1e-9);
        assert!(e.lambdas.windows(2).all(|w| w[0] >= w[1]));
        assert!(*e.lambdas.last().unwrap() >= -1e-8 * h.trace());
    }

    #[test]
    fn degenerate_and_zero_inputs() {
        let e = jacobi_eigh(&SymmetricPsd::new(Matrix::zeros(3, 3)).unwrap()).unwrap();
        assert_eq!(e.lambdas, vec![0.0; 3]);
        let q = random_orthogonal(6, 2).unwrap();
        let h = q.matmul(&Matrix::from_diag(&[3.0, 3.0, 3.0, 1.0, 0.0, 0.0])).matmul_t(&q);
        let e = jacobi_eigh(&SymmetricPsd::new(h.clone()).unwrap()).unwrap();
        assert!(e.reconstruct().sub(&h).frobenius() < 1e-10);
    }
}
