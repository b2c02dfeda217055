use std::path::PathBuf;

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymmetricPsd};

/// Rows per generated batch.
pub const SYNTHETIC_BATCH_ROWS: usize = 256;

/// Gaussian activations with a few inflated channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub samples: usize,
    #[serde(default)]
    pub outlier_channels: usize,
    #[serde(default = "unit")]
    pub outlier_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.samples == 0 {
            return Err(Error::config("synthetic calibration needs n >= 1 and samples >= 1"));
        }
        if self.outlier_channels > self.n {
            return Err(Error::config(format!(
                "{} outlier channels requested for width {}",
                self.outlier_channels, self.n
            )));
        }
        if !(self.outlier_scale.is_finite() && self.outlier_scale >= 0.0) {
            return Err(Error::config("outlier scale must be finite and >= 0"));
        }
        Ok(())
    }

    /// The inflated channels, sorted; a seeded draw without replacement.
    pub fn outlier_indices(&self) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6f75_746c_6965_7273);
        let mut idx = sample(&mut rng, self.n, self.outlier_channels.min(self.n)).into_vec();
        idx.sort_unstable();
        idx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CalibrationSource {
    Synthetic(SyntheticSpec),
    Archive(PathBuf),
    /// Assembled in memory, e.g. captured activations.
    Inline,
}

/// Activation batches (`samples × dim` each) of one layer input.
#[derive(Clone, Debug)]
pub struct CalibrationSet {
    batches: Vec<Matrix>,
    source: CalibrationSource,
}

impl CalibrationSet {
    /// Checks a common width and finite entries.
    pub fn new(batches: Vec<Matrix>, source: CalibrationSource) -> Result<Self> {
        let width = batches.first().map(|b| b.cols()).unwrap_or(0);
        for b in &batches {
            if b.cols() != width {
                return Err(Error::dims(format!(
                    "calibration batches of widths {width} and {}",
                    b.cols()
                )));
            }
            if !b.all_finite() {
                return Err(Error::NonFinite);
            }
        }
        Ok(CalibrationSet { batches, source })
    }

    pub fn batches(&self) -> &[Matrix] {
        &self.batches
    }

    pub fn source(&self) -> &CalibrationSource {
        &self.source
    }

    pub fn width(&self) -> usize {
        self.batches.first().map(|b| b.cols()).unwrap_or(0)
    }

    pub fn samples(&self) -> usize {
        self.batches.iter().map(|b| b.rows()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.samples() == 0
    }
}

/// Streaming `Σ xxᵀ` with a sample count.
#[derive(Clone, Debug)]
pub struct HessianAccumulator {
    sum: Matrix,
    count: usize,
}

impl HessianAccumulator {
    pub fn new(dim: usize) -> Self {
        HessianAccumulator {
            sum: Matrix::zeros(dim, dim),
            count: 0,
        }
    }

    pub fn add(&mut self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.sum.rows() {
            return Err(Error::dims(format!(
                "batch of width {} for a {}-dimensional Hessian",
                batch.cols(),
                self.sum.rows()
            )));
        }
        self.sum.add_assign_scaled(1.0, &batch.t_matmul(batch));
        self.count += batch.rows();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `(1/N) Σ xxᵀ`.
    pub fn finish(self) -> Result<SymmetricPsd> {
        if self.count == 0 {
            return Err(Error::config("no calibration samples"));
        }
        SymmetricPsd::new(self.sum.scale(1.0 / self.count as f64))
    }
}

/// `H = (1/N) Σ xxᵀ` over every sample of every batch.
pub fn accumulate_hessian(calib: &CalibrationSet) -> Result<SymmetricPsd> {
    let mut acc = HessianAccumulator::new(calib.width());
    for b in calib.batches() {
        acc.add(b)?;
    }
    acc.finish()
}

/// `H + fraction · mean(diag H) · I`.
pub fn damp(h: &SymmetricPsd, fraction: f64) -> Result<SymmetricPsd> {
    if !(fraction >= 0.0 && fraction.is_finite()) {
        return Err(Error::config(format!("damping fraction must be >= 0, got {fraction}")));
    }
    let n = h.dim();
    if n == 0 || fraction == 0.0 {
        return Ok(h.clone());
    }
    let shift = fraction * h.trace() / n as f64;
    let mut m = h.matrix().clone();
    for i in 0..n {
        m[(i, i)] += shift;
    }
    SymmetricPsd::new(m)
}

/// Seeded Gaussian activations, split into batches of
/// [`SYNTHETIC_BATCH_ROWS`], with the outlier channels multiplied by
/// `outlier_scale`.
pub fn synthetic_calibration(spec: &SyntheticSpec) -> Result<CalibrationSet> {
    spec.validate()?;
    let outliers = spec.outlier_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut batches = Vec::new();
    let mut left = spec.samples;
    while left > 0 {
        let rows = left.min(SYNTHETIC_BATCH_ROWS);
        let mut b = Matrix::gaussian(rows, spec.n, 1.0, &mut rng);
        for i in 0..rows {
            let row = b.row_mut(i);
            for &c in &outliers {
                row[c] *= spec.outlier_scale;
            }
        }
        batches.push(b);
        left -= rows;
    }
    CalibrationSet::new(batches, CalibrationSource::Synthetic(spec.clone()))
}
