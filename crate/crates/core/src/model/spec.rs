use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rotation::Role;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightDistribution {
    /// `N(0, 1/d_in)` entries.
    Gaussian,
    /// Gaussian entries of which a `fraction` (chosen independently per
    /// entry) are multiplied by `multiplier`.
    PlantedOutliers { fraction: f64, multiplier: f64 },
    /// All block weights zero.
    Zero,
}

/// Shape and seed of a toy model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelSpec {
    pub n_layers: usize,
    pub d_model: usize,
    /// Head width; the `R2` rotations are `d_head_block × d_head_block`.
    pub d_head_block: usize,
    pub d_ff: usize,
    pub seed: u64,
    pub weights: WeightDistribution,
}

impl Default for ToyModelSpec {
    fn default() -> Self {
        ToyModelSpec {
            n_layers: 4,
            d_model: 64,
            d_head_block: 16,
            d_ff: 128,
            seed: 0,
            weights: WeightDistribution::Gaussian,
        }
    }
}

impl ToyModelSpec {
    /// The default shape with planted weight outliers.
    pub fn planted(seed: u64) -> Self {
        ToyModelSpec {
            seed,
            weights: WeightDistribution::PlantedOutliers {
                fraction: 0.005,
                multiplier: 20.0,
            },
            ..ToyModelSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 {
            return Err(Error::config("the model needs at least one layer"));
        }
        for (name, d) in [("d_model", self.d_model), ("d_ff", self.d_ff)] {
            if d < 2 || !d.is_power_of_two() {
                return Err(Error::config(format!("{name} must be a power of two >= 2, got {d}")));
            }
        }
        if self.d_head_block < 2 || !self.d_model.is_multiple_of(self.d_head_block) {
            return Err(Error::config(format!(
                "d_head_block must be >= 2 and divide d_model, got {}",
                self.d_head_block
            )));
        }
        if let WeightDistribution::PlantedOutliers { fraction, multiplier } = self.weights {
            if !(0.0..=1.0).contains(&fraction) || !multiplier.is_finite() {
                return Err(Error::config("outlier fraction must lie in [0, 1] with a finite multiplier"));
            }
        }
        Ok(())
    }

    pub fn n_heads(&self) -> usize {
        self.d_model / self.d_head_block
    }

    /// `(out, in)` of a role's weight.
    pub fn shape(&self, role: Role) -> (usize, usize) {
        match role {
            Role::Gate | Role::Up => (self.d_ff, self.d_model),
            Role::Down => (self.d_model, self.d_ff),
            _ => (self.d_model, self.d_model),
        }
    }

    pub(crate) fn sample(&self, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let std = 1.0 / (cols as f64).sqrt();
        match self.weights {
            WeightDistribution::Zero => Matrix::zeros(rows, cols),
            WeightDistribution::Gaussian => Matrix::gaussian(rows, cols, std, rng),
            WeightDistribution::PlantedOutliers { fraction, multiplier } => {
                let mut w = Matrix::gaussian(rows, cols, std, rng);
                for v in w.as_mut_slice() {
                    if rng.random::<f64>() < fraction {
                        *v *= multiplier;
                    }
                }
                w
            }
        }
    }

    pub(crate) fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}
