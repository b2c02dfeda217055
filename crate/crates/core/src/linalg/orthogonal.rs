//! Householder QR, seeded Haar-random orthogonal matrices and a dense LU solver.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{axpy, Matrix};
use crate::error::{Error, Result};

/// Thin Householder QR of a square matrix, returning `(Q, diag(R))`.
fn householder_qr(a: &Matrix) -> (Matrix, Vec<f64>) {
    let n = a.rows();
    let mut r = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let norm: f64 = (k..n).map(|i| r[(i, k)] * r[(i, k)]).sum::<f64>().sqrt();
        let mut v = vec![0.0; n];
        if norm == 0.0 {
            reflectors.push(v);
            continue;
        }
        let alpha = if r[(k, k)] > 0.0 { -norm } else { norm };
        for i in k..n {
            v[i] = r[(i, k)];
        }
        v[k] -= alpha;
        let vnorm_sq: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm_sq > 0.0 {
            for j in k..n {
                let s: f64 = (k..n).map(|i| v[i] * r[(i, j)]).sum::<f64>() * 2.0 / vnorm_sq;
                for i in k..n {
                    r[(i, j)] -= s * v[i];
                }
            }
        }
        reflectors.push(v);
    }
    // Q = H_0 H_1 ... H_{n-1}, accumulated right to left on the identity
    let mut q = Matrix::identity(n);
    for (k, v) in reflectors.iter().enumerate().rev() {
        let vnorm_sq: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm_sq == 0.0 {
            continue;
        }
        for j in 0..n {
            let s: f64 = (k..n).map(|i| v[i] * q[(i, j)]).sum::<f64>() * 2.0 / vnorm_sq;
            for i in k..n {
                q[(i, j)] -= s * v[i];
            }
        }
    }
    (q, r.diag())
}

/// Haar-distributed orthogonal matrix: QR of a seeded Gaussian matrix with
/// columns of `Q` sign-fixed so that `diag(R) > 0`.
pub fn random_orthogonal(n: usize, seed: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(Error::config("random_orthogonal needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Matrix::gaussian(n, n, 1.0, &mut rng);
    let (mut q, r_diag) = householder_qr(&g);
    for (j, d) in r_diag.iter().enumerate() {
        if *d < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    Ok(q)
}

fn swap_rows(data: &mut [f64], width: usize, a: usize, b: usize) {
    let (lo, hi) = (a.min(b), a.max(b));
    let (head, tail) = data.split_at_mut(hi * width);
    head[lo * width..(lo + 1) * width].swap_with_slice(&mut tail[..width]);
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if b.rows() != n {
        return Err(Error::dims(format!(
            "solve: lhs is {n}x{n}, rhs has {} rows",
            b.rows()
        )));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let m = x.cols();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for k in 0..n {
        let (p, pmax) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -1.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if pmax <= scale * 1e-14 {
            return Err(Error::Singular);
        }
        if p != k {
            swap_rows(lu.as_mut_slice(), n, k, p);
            swap_rows(x.as_mut_slice(), m, k, p);
        }
        let pivot = lu[(k, k)];
        let (lu_top, lu_rest) = lu.as_mut_slice().split_at_mut((k + 1) * n);
        let lu_k = &lu_top[k * n..];
        let (x_top, x_rest) = x.as_mut_slice().split_at_mut((k + 1) * m);
        let x_k = &x_top[k * m..];
        for (lu_i, x_i) in lu_rest.chunks_exact_mut(n).zip(x_rest.chunks_exact_mut(m)) {
            let f = lu_i[k] / pivot;
            if f == 0.0 {
                continue;
            }
            lu_i[k] = f;
            axpy(-f, &lu_k[k + 1..], &mut lu_i[k + 1..]);
            axpy(-f, x_k, x_i);
        }
    }
    for k in (0..n).rev() {
        let (x_head, x_tail) = x.as_mut_slice().split_at_mut((k + 1) * m);
        let x_k = &mut x_head[k * m..];
        for (i, x_i) in x_tail.chunks_exact(m).enumerate() {
            let l = lu[(k, k + 1 + i)];
            if l != 0.0 {
                axpy(-l, x_i, x_k);
            }
        }
        let inv = 1.0 / lu[(k, k)];
        x_k.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_is_a_sign() {
        let q = random_orthogonal(1, 3).unwrap();
        assert_eq!(q.as_slice()[0].abs(), 1.0);
    }

    #[test]
    fn orthogonal_and_deterministic() {
        let q = random_orthogonal(16, 42).unwrap();
        assert!(q.orthogonality_defect() <= 1e-10);
        assert_eq!(q, random_orthogonal(16, 42).unwrap());
        assert_ne!(q, random_orthogonal(16, 43).unwrap());
        assert!(random_orthogonal(0, 1).is_err());
    }

    #[test]
    fn sign_convention_gives_positive_r_diagonal() {
        // R = Qᵀ G must have a positive diagonal for the seeded Gaussian
        let n = 8;
        let seed = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Matrix::gaussian(n, n, 1.0, &mut rng);
        let q = random_orthogonal(n, seed).unwrap();
        let r = q.t_matmul(&g);
        for i in 0..n {
            assert!(r[(i, i)] > 0.0);
            for j in 0..i {
                assert!(r[(i, j)].abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lu_solve() {
        let a = Matrix::from_rows(&[[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]]);
        let x_true = Matrix::from_rows(&[[1.0, -1.0], [2.0, 0.5], [-3.0, 4.0]]);
        let b = a.matmul(&x_true);
        let x = solve(&a, &b).unwrap();
        assert!(x.sub(&x_true).max_abs() < 1e-12);
        let singular = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(matches!(
            solve(&singular, &Matrix::identity(2)),
            Err(Error::Singular)
        ));
    }
}
