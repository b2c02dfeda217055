//! Sylvester Hadamard matrices and the fast Walsh–Hadamard transform.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Matrix;
use crate::error::{Error, Result};

fn check_pow2(n: usize) -> Result<()> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    Ok(())
}

/// Orthonormal Sylvester Hadamard matrix `H_n / √n`.
pub fn hadamard_orthonormal(n: usize) -> Result<Matrix> {
    check_pow2(n)?;
    let scale = 1.0 / (n as f64).sqrt();
    // Sylvester entry (i, j) is (-1)^popcount(i & j)
    Ok(Matrix::from_fn(n, n, |i, j| {
        if (i & j).count_ones() % 2 == 0 {
            scale
        } else {
            -scale
        }
    }))
}

/// The ±1 diagonal drawn by [`randomized_hadamard`] for `(n, seed)`.
pub fn random_signs(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// `diag(s) · hadamard_orthonormal(n)` with seeded signs `s ∈ {±1}ⁿ`.
pub fn randomized_hadamard(n: usize, seed: u64) -> Result<Matrix> {
    let mut h = hadamard_orthonormal(n)?;
    let signs = random_signs(n, seed);
    for (i, s) in signs.into_iter().enumerate() {
        if s < 0.0 {
            h.row_mut(i).iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(h)
}

/// In-place Walsh–Hadamard butterfly. With `normalize` the result equals
/// `hadamard_orthonormal(n) · v`; without it, the unnormalized `H_n · v`.
pub fn fwht_in_place(v: &mut [f64], normalize: bool) -> Result<()> {
    let n = v.len();
    check_pow2(n)?;
    let mut half = 1;
    while half < n {
        for block in v.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
    if normalize {
        let s = 1.0 / (n as f64).sqrt();
        v.iter_mut().for_each(|x| *x *= s);
    }
    Ok(())
}
