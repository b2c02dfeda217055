//! The experiment file: one TOML document per experiment.
//!
//! ```toml
//! seed = 0                      # model seed; also seeds the Hadamard start
//! out = "runs/default"          # overridden by --out
//!
//! [model]                       # either a spec or `archive = "path"`
//! n_layers = 4
//! d_model = 64
//! d_head_block = 16
//! d_ff = 128
//! weights = { kind = "planted-outliers", fraction = 0.005, multiplier = 20.0 }
//!
//! [rotation]
//! method = "optrot"             # none | hadamard | optrot | optrot-v2 | optrot+ | optrot+-v2
//! p = 4
//! steps = 1000                  # optional training overrides
//!
//! [calibration]                 # synthetic activations, or archive + holdout_archive
//! samples = 512
//! holdout_samples = 512
//!
//! [quantize]
//! bits = 4
//! group_size = 0
//!
//! [bounds]                      # grid of the tr(D) experiment
//! dims = [16, 64, 256]
//! seeds = 20
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use rotq_core::archive::load_calibration;
use rotq_core::hessian::{synthetic_calibration, BoundsGrid, CalibrationSet, SyntheticSpec};
use rotq_core::model::{PipelineConfig, ToyModelSpec};
use rotq_core::quant::QuantConfig;
use rotq_core::rotation::{ObjectiveKind, ObjectiveSpec, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    None,
    Hadamard,
    #[serde(rename = "optrot")]
    OptRot,
    #[serde(rename = "optrot-v2")]
    OptRotV2,
    #[serde(rename = "optrot+")]
    OptRotPlus,
    #[serde(rename = "optrot+-v2")]
    OptRotPlusV2,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Hadamard => "hadamard",
            Method::OptRot => "optrot",
            Method::OptRotV2 => "optrot-v2",
            Method::OptRotPlus => "optrot+",
            Method::OptRotPlusV2 => "optrot+-v2",
        }
    }

    /// The trained objective, if any.
    pub fn objective(&self) -> Option<ObjectiveKind> {
        match self {
            Method::None | Method::Hadamard => None,
            other => ObjectiveKind::from_str(other.as_str()).ok(),
        }
    }

    pub fn needs_calibration(&self) -> bool {
        self.objective().is_some_and(|k| k.uses_hessian())
    }
}

/// [`ToyModelSpec`] with every field optional, so a partial table keeps
/// the defaults; the seed comes from the top-level `seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Load this model archive instead of building from the spec.
    pub archive: Option<PathBuf>,
    pub n_layers: Option<usize>,
    pub d_model: Option<usize>,
    pub d_head_block: Option<usize>,
    pub d_ff: Option<usize>,
    pub weights: Option<rotq_core::model::WeightDistribution>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RotationSection {
    pub method: Method,
    pub p: u32,
    pub learning_rate: Option<f64>,
    pub steps: Option<usize>,
    pub momentum: Option<f64>,
    pub top_k: Option<usize>,
}

impl Default for RotationSection {
    fn default() -> Self {
        RotationSection {
            method: Method::Hadamard,
            p: 4,
            learning_rate: None,
            steps: None,
            momentum: None,
            top_k: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub samples: usize,
    pub holdout_samples: usize,
    pub outlier_channels: usize,
    pub outlier_scale: f64,
    /// Calibration batches are drawn with this seed, held-out ones with `seed + 1`.
    pub seed: u64,
    /// Relative damping of the Hessians fed to the Hessian-aware objectives.
    pub damping: f64,
    pub archive: Option<PathBuf>,
    pub holdout_archive: Option<PathBuf>,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            samples: 512,
            holdout_samples: 512,
            outlier_channels: 0,
            outlier_scale: 1.0,
            seed: 0,
            damping: 0.01,
            archive: None,
            holdout_archive: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizeSection {
    pub bits: u8,
    /// 0 means one scale per row.
    pub group_size: usize,
    pub damping: f64,
    pub delta: f64,
    pub clean_activations: bool,
}

impl Default for QuantizeSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        QuantizeSection {
            bits: p.quant.bits,
            group_size: p.quant.group_size,
            damping: p.damping,
            delta: p.delta,
            clean_activations: p.clean_activations,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub model: ModelSection,
    pub rotation: RotationSection,
    pub calibration: Option<CalibrationSection>,
    pub quantize: QuantizeSection,
    pub bounds: BoundsGrid,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn model_spec(&self) -> ToyModelSpec {
        let d = ToyModelSpec::default();
        let f = &self.model;
        ToyModelSpec {
            n_layers: f.n_layers.unwrap_or(d.n_layers),
            d_model: f.d_model.unwrap_or(d.d_model),
            d_head_block: f.d_head_block.unwrap_or(d.d_head_block),
            d_ff: f.d_ff.unwrap_or(d.d_ff),
            seed: self.seed,
            weights: f.weights.unwrap_or(d.weights),
        }
    }

    pub fn objective(&self) -> Option<ObjectiveSpec> {
        self.rotation.method.objective().map(|kind| ObjectiveSpec {
            p: self.rotation.p,
            ..ObjectiveSpec::new(kind)
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let r = &self.rotation;
        let base = r.method.objective().map(TrainConfig::for_kind).unwrap_or_default();
        TrainConfig {
            learning_rate: r.learning_rate.unwrap_or(base.learning_rate),
            steps: r.steps.unwrap_or(base.steps),
            momentum: r.momentum.unwrap_or(base.momentum),
            top_k: r.top_k.or(base.top_k),
            seed: self.seed,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let q = &self.quantize;
        PipelineConfig {
            quant: QuantConfig::nearest(q.bits).with_group_size(q.group_size),
            damping: q.damping,
            delta: q.delta,
            clean_activations: q.clean_activations,
        }
    }

    /// Checks everything that can be checked without touching the model.
    pub fn validate(&self) -> CliResult<()> {
        if self.model.archive.is_none() {
            self.model_spec().validate()?;
        }
        if let Some(spec) = self.objective() {
            spec.validate()?;
            self.train_config().validate()?;
        }
        if self.rotation.method.needs_calibration() && self.calibration.is_none() {
            return Err(CliError::config(format!(
                "method {} needs a [calibration] section",
                self.rotation.method.as_str()
            )));
        }
        if let Some(c) = &self.calibration {
            if c.archive.is_some() != c.holdout_archive.is_some() {
                return Err(CliError::config("calibration archive and holdout_archive go together"));
            }
            if c.archive.is_none() && (c.samples == 0 || c.holdout_samples == 0) {
                return Err(CliError::config("calibration needs samples >= 1 and holdout_samples >= 1"));
            }
            if !(c.damping >= 0.0 && c.damping.is_finite()) {
                return Err(CliError::config("calibration damping must be >= 0"));
            }
        }
        let q = &self.quantize;
        if !(2..=8).contains(&q.bits) {
            return Err(CliError::config(format!("quantize.bits must lie in [2, 8], got {}", q.bits)));
        }
        if !(q.delta > 0.0 && q.delta < 1.0 && q.damping >= 0.0) {
            return Err(CliError::config("quantize.delta must lie in (0, 1) and damping be >= 0"));
        }
        self.bounds.validate()?;
        Ok(())
    }

    /// `(calibration, holdout)` for a model of width `n`.
    pub fn calibration_sets(&self, n: usize) -> CliResult<(CalibrationSet, CalibrationSet)> {
        let c = self
            .calibration
            .as_ref()
            .ok_or_else(|| CliError::config("this command needs a [calibration] section"))?;
        let (calib, holdout) = match (&c.archive, &c.holdout_archive) {
            (Some(a), Some(h)) => (load_calibration(a)?, load_calibration(h)?),
            _ => {
                let spec = |samples, seed| SyntheticSpec {
                    n,
                    samples,
                    outlier_channels: c.outlier_channels,
                    outlier_scale: c.outlier_scale,
                    seed,
                };
                (
                    synthetic_calibration(&spec(c.samples, c.seed))?,
                    synthetic_calibration(&spec(c.holdout_samples, c.seed.wrapping_add(1)))?,
                )
            }
        };
        for set in [&calib, &holdout] {
            if set.width() != n {
                return Err(CliError::config(format!(
                    "calibration width {} does not match model width {n}",
                    set.width()
                )));
            }
        }
        Ok((calib, holdout))
    }
}
