use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{incoherence_trace_bound, ub_bound};
use crate::error::{Error, Result};
use crate::linalg::{hadamard_orthonormal, jacobi_eigh, ldl_upper, random_orthogonal, Matrix, SymmetricPsd};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Spectrum {
    /// `λᵢ = i^exponent`.
    Polynomial { exponent: f64 },
    /// As polynomial, with `λᵢ = 0` for `i > rank`.
    LowRank { exponent: f64, rank: usize },
}

impl Spectrum {
    pub fn name(&self) -> &'static str {
        match self {
            Spectrum::Polynomial { .. } => "polynomial",
            Spectrum::LowRank { .. } => "low-rank",
        }
    }

    /// Eigenvalues in index order `i = 1..=n` (ascending).
    pub fn eigenvalues(&self, n: usize) -> Vec<f64> {
        let (exponent, rank) = match *self {
            Spectrum::Polynomial { exponent } => (exponent, n),
            Spectrum::LowRank { exponent, rank } => (exponent, rank),
        };
        (1..=n)
            .map(|i| if i <= rank { (i as f64).powf(exponent) } else { 0.0 })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Eigenbasis {
    /// Sylvester Hadamard without random signs (`μ_H = 1`).
    Hadamard,
    Random { seed: u64 },
    /// Diagonal `H`.
    Identity,
}

impl Eigenbasis {
    pub fn name(&self) -> &'static str {
        match self {
            Eigenbasis::Hadamard => "hadamard",
            Eigenbasis::Random { .. } => "random",
            Eigenbasis::Identity => "identity",
        }
    }

    pub fn matrix(&self, n: usize) -> Result<Matrix> {
        match *self {
            Eigenbasis::Hadamard => hadamard_orthonormal(n),
            Eigenbasis::Random { seed } => random_orthogonal(n, seed),
            Eigenbasis::Identity => Ok(Matrix::identity(n)),
        }
    }
}

impl fmt::Display for Eigenbasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub n: usize,
    pub spectrum: Spectrum,
    pub basis: Eigenbasis,
}

impl SpectrumSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("spectrum dimension must be >= 1"));
        }
        if self.basis == Eigenbasis::Hadamard && !self.n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(self.n));
        }
        if let Spectrum::LowRank { rank, .. } = self.spectrum {
            if rank > self.n {
                return Err(Error::config(format!("rank {rank} exceeds dimension {}", self.n)));
            }
        }
        Ok(())
    }

    /// `(Q, λ)` with `H = Q diag(λ) Qᵀ`.
    pub fn eigenpairs(&self) -> Result<(Matrix, Vec<f64>)> {
        self.validate()?;
        Ok((self.basis.matrix(self.n)?, self.spectrum.eigenvalues(self.n)))
    }
}

/// `H = Q diag(λ) Qᵀ` for the spec's spectrum and eigenbasis.
pub fn build_spectrum_hessian(spec: &SpectrumSpec) -> Result<SymmetricPsd> {
    let (q, lambdas) = spec.eigenpairs()?;
    let mut scaled = q.clone();
    for i in 0..spec.n {
        for (v, l) in scaled.row_mut(i).iter_mut().zip(&lambdas) {
            *v *= l;
        }
    }
    SymmetricPsd::new(scaled.matmul_t(&q).symmetrized())
}

/// One point of the `tr(D)` comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsRow {
    pub n: usize,
    pub spectrum: String,
    pub basis: String,
    pub seed: u64,
    pub tr_h: f64,
    pub tr_d: f64,
    pub ub: f64,
    /// `μ_H² tr(H^{1/2})² / n` with the constructed eigenvectors.
    pub inc_bound_true_q: f64,
    /// The same bound from a Jacobi eigendecomposition of `H`.
    pub inc_bound_recomputed_q: f64,
}

/// Grid of the `tr(D)` experiment; every `(n, spectrum, basis)` triple is
/// run once per seed, with the seed driving the random eigenbasis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsGrid {
    pub dims: Vec<usize>,
    pub exponent: f64,
    /// Rank of the low-rank spectrum as a fraction of `n`.
    pub rank_fraction: f64,
    pub spectra: Vec<String>,
    pub bases: Vec<String>,
    pub seeds: usize,
}

impl Default for BoundsGrid {
    fn default() -> Self {
        BoundsGrid {
            dims: vec![16, 64, 256],
            exponent: 1.5,
            rank_fraction: 0.5,
            spectra: vec!["polynomial".into(), "low-rank".into()],
            bases: vec!["hadamard".into(), "random".into()],
            seeds: 20,
        }
    }
}

impl BoundsGrid {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::config("the bounds grid needs at least one seed"));
        }
        if let Some(n) = self.dims.iter().find(|n| !n.is_power_of_two()) {
            return Err(Error::NotPowerOfTwo(*n));
        }
        if !(self.rank_fraction > 0.0 && self.rank_fraction <= 1.0) {
            return Err(Error::config("rank_fraction must lie in (0, 1]"));
        }
        for s in &self.spectra {
            if s != "polynomial" && s != "low-rank" {
                return Err(Error::config(format!("unknown spectrum {s:?}")));
            }
        }
        for b in &self.bases {
            if !["hadamard", "random", "identity"].contains(&b.as_str()) {
                return Err(Error::config(format!("unknown eigenbasis {b:?}")));
            }
        }
        Ok(())
    }

    /// Every `(spec, seed)` point in output order: dimension, spectrum,
    /// basis, seed.
    pub fn points(&self) -> Result<Vec<(SpectrumSpec, u64)>> {
        self.validate()?;
        let mut out = Vec::new();
        for &n in &self.dims {
            for s in &self.spectra {
                let spectrum = if s == "polynomial" {
                    Spectrum::Polynomial { exponent: self.exponent }
                } else {
                    let rank = ((n as f64 * self.rank_fraction).round() as usize).clamp(1, n);
                    Spectrum::LowRank {
                        exponent: self.exponent,
                        rank,
                    }
                };
                for b in &self.bases {
                    for seed in 0..self.seeds as u64 {
                        let basis = match b.as_str() {
                            "hadamard" => Eigenbasis::Hadamard,
                            "identity" => Eigenbasis::Identity,
                            _ => Eigenbasis::Random {
                                seed: seed.wrapping_mul(7919).wrapping_add(n as u64),
                            },
                        };
                        out.push((SpectrumSpec { n, spectrum, basis }, seed));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.dims.len() * self.spectra.len() * self.bases.len() * self.seeds
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `tr(H)`, `tr(D)`, `UB` and the incoherence bound with both eigenvector
/// variants for one spectrum.
pub fn bounds_row(spec: &SpectrumSpec, seed: u64) -> Result<BoundsRow> {
    let (q, lambdas) = spec.eigenpairs()?;
    let h = build_spectrum_hessian(spec)?;
    let n = spec.n;
    let tr_d = ldl_upper(&h)?.trace_d();
    let trace_sqrt_true: f64 = lambdas.iter().map(|l| l.sqrt()).sum();
    let mu_true = (n as f64).sqrt() * q.max_abs();
    let eig = jacobi_eigh(&h)?;
    let mu_recomputed = (n as f64).sqrt() * eig.q_max();
    Ok(BoundsRow {
        n,
        spectrum: spec.spectrum.name().into(),
        basis: spec.basis.name().into(),
        seed,
        tr_h: h.trace(),
        tr_d,
        ub: ub_bound(&h)?,
        inc_bound_true_q: incoherence_trace_bound(mu_true, trace_sqrt_true, n),
        inc_bound_recomputed_q: incoherence_trace_bound(mu_recomputed, eig.trace_sqrt(), n),
    })
}

/// Runs every grid point (in parallel) and returns rows in grid order.
pub fn bounds_experiment(grid: &BoundsGrid) -> Result<Vec<BoundsRow>> {
    grid.points()?
        .par_iter()
        .map(|(spec, seed)| bounds_row(spec, *seed))
        .collect()
}

pub fn write_bounds_csv(path: &Path, rows: &[BoundsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bounds_csv(path: &Path) -> Result<Vec<BoundsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::hessian_incoherence;

    fn poly(n: usize, basis: Eigenbasis) -> SpectrumSpec {
        SpectrumSpec {
            n,
            spectrum: Spectrum::Polynomial { exponent: 1.5 },
            basis,
        }
    }

    #[test]
    fn two_dimensional_hadamard_spectrum() {
        let h = build_spectrum_hessian(&poly(2, Eigenbasis::Hadamard)).unwrap();
        let eig = jacobi_eigh(&h).unwrap();
        assert!((eig.lambdas[0] - 2f64.powf(1.5)).abs() <= 1e-12);
        assert!((eig.lambdas[1] - 1.0).abs() <= 1e-12);
        let mu = hessian_incoherence(&h).unwrap();
        assert!((mu.mu_h - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn low_rank_has_zero_eigenvalues() {
        let spec = SpectrumSpec {
            n: 16,
            spectrum: Spectrum::LowRank { exponent: 1.5, rank: 10 },
            basis: Eigenbasis::Random { seed: 1 },
        };
        let eig = jacobi_eigh(&build_spectrum_hessian(&spec).unwrap()).unwrap();
        assert!(eig.lambdas[10..].iter().all(|l| l.abs() <= 1e-10));
        assert!(eig.lambdas[9] > 0.5);
    }

    #[test]
    fn trace_is_the_power_sum() {
        for basis in [Eigenbasis::Hadamard, Eigenbasis::Random { seed: 2 }, Eigenbasis::Identity] {
            let h = build_spectrum_hessian(&poly(32, basis)).unwrap();
            let expected: f64 = (1..=32).map(|i| (i as f64).powf(1.5)).sum();
            assert!((h.trace() - expected).abs() <= 1e-10 * expected);
        }
    }

    #[test]
    fn spectrum_round_trips_through_jacobi() {
        for (n, basis) in [(16, Eigenbasis::Hadamard), (24, Eigenbasis::Random { seed: 3 })] {
            let eig = jacobi_eigh(&build_spectrum_hessian(&poly(n, basis)).unwrap()).unwrap();
            for (i, l) in eig.lambdas.iter().enumerate() {
                let expected = ((n - i) as f64).powf(1.5);
                assert!((l - expected).abs() <= 1e-8 * expected);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(build_spectrum_hessian(&poly(12, Eigenbasis::Hadamard)).is_err());
        let spec = SpectrumSpec {
            n: 4,
            spectrum: Spectrum::LowRank { exponent: 1.0, rank: 5 },
            basis: Eigenbasis::Identity,
        };
        assert!(spec.validate().is_err());
        let grid = BoundsGrid {
            dims: vec![12],
            ..BoundsGrid::default()
        };
        assert!(bounds_experiment(&grid).is_err());
    }

    #[test]
    fn diagonal_sanity_row() {
        let row = bounds_row(&poly(16, Eigenbasis::Identity), 0).unwrap();
        assert!((row.tr_d - row.tr_h).abs() <= 1e-12 * row.tr_h);
        assert!((row.ub - row.tr_h).abs() <= 1e-12 * row.tr_h);
    }

    #[test]
    fn small_grid_satisfies_the_chain_and_counts_rows() {
        let grid = BoundsGrid {
            dims: vec![8, 16],
            seeds: 3,
            bases: vec!["hadamard".into(), "random".into(), "identity".into()],
            ..BoundsGrid::default()
        };
        let rows = bounds_experiment(&grid).unwrap();
        assert_eq!(rows.len(), grid.len());
        assert_eq!(rows.len(), 2 * 2 * 3 * 3);
        for r in &rows {
            let tol = 1e-9 * r.tr_h;
            assert!(r.tr_d <= 2.0 * r.ub + tol && r.ub <= r.tr_h + tol, "{r:?}");
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bounds.csv");
        write_bounds_csv(&path, &rows).unwrap();
        assert_eq!(read_bounds_csv(&path).unwrap(), rows);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with(
            "n,spectrum,basis,seed,tr_h,tr_d,ub,inc_bound_true_q,inc_bound_recomputed_q\n"
        ));
    }
}
