use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use rotq_core::archive::{load_model, load_rotations, save_model, save_rotations};
use rotq_core::diagnostics::{write_reports_csv, BoundReport};
use rotq_core::hessian::{bounds_experiment, write_bounds_csv};
use rotq_core::model::{build_toy_model, calibrated_records, quantize_model, ToyModel};
use rotq_core::rotation::{learn_rotations, objective_value, ObjectiveKind, ObjectiveSpec, RotationSet};

use crate::config::{ExperimentConfig, Method};
use crate::error::{CliError, CliResult};

pub const MODEL_DIR: &str = "model";
pub const ROTATIONS_DIR: &str = "rotations";
pub const QUANTIZED_DIR: &str = "quantized";
pub const LOSS_CSV: &str = "loss.csv";
pub const LEARN_JSON: &str = "learn.json";
pub const TIMING_JSON: &str = "timing.json";
pub const REPORTS_CSV: &str = "reports.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const BOUNDS_CSV: &str = "bounds.csv";

/// Resolved invocation context shared by the commands.
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub force: bool,
}

impl Context {
    pub fn guard(&self, artifact: &Path) -> CliResult<()> {
        if artifact.exists() && !self.force {
            return Err(CliError::config(format!(
                "{} already exists; pass --force to overwrite",
                artifact.display()
            )));
        }
        Ok(())
    }

    fn model_dir(&self) -> PathBuf {
        self.config.model.archive.clone().unwrap_or_else(|| self.out.join(MODEL_DIR))
    }

    fn load_model(&self) -> CliResult<ToyModel> {
        let dir = self.model_dir();
        if !dir.exists() {
            return Err(CliError::Missing(dir));
        }
        Ok(load_model(&dir)?)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    if !path.exists() {
        return Err(CliError::Missing(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Builds the toy model of the config and writes `<out>/model`.
pub fn generate(ctx: &Context) -> CliResult<PathBuf> {
    if ctx.config.model.archive.is_some() {
        return Err(CliError::config("generate builds from the [model] spec; remove `archive`"));
    }
    let dir = ctx.out.join(MODEL_DIR);
    ctx.guard(&dir)?;
    let model = build_toy_model(&ctx.config.model_spec())?;
    save_model(&dir, &model)?;
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnRecord {
    pub method: Method,
    pub model_seed: u64,
    pub p: u32,
    pub loss_scale: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub top_k: Option<usize>,
    /// `layer.role` of the matrices in the objective.
    pub selected: Vec<String>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

#[derive(Serialize)]
struct Timing {
    wall_clock_seconds: f64,
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

/// Writes `<out>/rotations`, `loss.csv`, `learn.json` and `timing.json`.
pub fn learn(ctx: &Context) -> CliResult<PathBuf> {
    let cfg = &ctx.config;
    let dir = ctx.out.join(ROTATIONS_DIR);
    ctx.guard(&dir)?;
    let model = ctx.load_model()?;
    let s = &model.spec;
    let start = Instant::now();
    let init = match cfg.rotation.method {
        Method::None => RotationSet::identity(s.n_layers, s.d_model, s.d_head_block, s.d_ff),
        _ => RotationSet::hadamard(s.n_layers, s.d_model, s.d_head_block, s.d_ff, cfg.seed)?,
    };
    let train = cfg.train_config();
    let (rotations, history, record) = match cfg.objective() {
        None => {
            let spec = ObjectiveSpec::new(ObjectiveKind::OptRot);
            let loss = objective_value(&spec, &model.layers, &init)?;
            let record = LearnRecord {
                method: cfg.rotation.method,
                model_seed: s.seed,
                p: spec.p,
                loss_scale: spec.loss_scale,
                steps: 0,
                learning_rate: 0.0,
                momentum: 0.0,
                top_k: None,
                selected: model.layers.iter().map(|l| format!("{}.{}", l.layer, l.role)).collect(),
                initial_loss: loss,
                final_loss: loss,
            };
            (init, vec![loss], record)
        }
        Some(spec) => {
            let layers = if spec.uses_hessian() {
                let (calib, _) = cfg.calibration_sets(s.d_model)?;
                let damping = cfg.calibration.as_ref().map(|c| c.damping).unwrap_or(0.0);
                calibrated_records(&model, &calib, damping)?
            } else {
                model.layers.clone()
            };
            let out = learn_rotations(&spec, &layers, &train, &init)?;
            let record = LearnRecord {
                method: cfg.rotation.method,
                model_seed: s.seed,
                p: out.spec.p,
                loss_scale: out.spec.loss_scale,
                steps: train.steps,
                learning_rate: train.learning_rate,
                momentum: train.momentum,
                top_k: train.top_k,
                selected: out
                    .selected
                    .iter()
                    .map(|&i| format!("{}.{}", layers[i].layer, layers[i].role))
                    .collect(),
                initial_loss: out.loss_history[0],
                final_loss: *out.loss_history.last().expect("nonempty history"),
            };
            (out.rotations, out.loss_history, record)
        }
    };
    save_rotations(&dir, &rotations)?;
    let mut w = csv::Writer::from_path(ctx.out.join(LOSS_CSV))?;
    for (step, loss) in history.into_iter().enumerate() {
        w.serialize(LossRow { step, loss })?;
    }
    w.flush().map_err(|e| CliError::io("writing loss history", e))?;
    write_json(&ctx.out.join(LEARN_JSON), &record)?;
    write_json(
        &ctx.out.join(TIMING_JSON),
        &Timing {
            wall_clock_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    Ok(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleAggregate {
    pub mean_mu_w: f64,
    pub max_mu_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model_seed: u64,
    pub method: String,
    pub bits: u8,
    pub group_size: usize,
    pub kl_proxy: f64,
    /// Mean over layers with a finite SNR.
    pub mean_snr_db: Option<f64>,
    /// Layers quantized without any error.
    pub exact_layers: usize,
    pub mu_w_by_role: BTreeMap<String, RoleAggregate>,
}

fn summarize(model_seed: u64, method: String, cfg: &ExperimentConfig, kl: f64, reports: &[BoundReport]) -> Summary {
    let finite: Vec<f64> = reports.iter().filter(|r| !r.snr_db.is_exact()).map(|r| r.snr_db.value()).collect();
    let mut by_role: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        by_role.entry(r.role.clone()).or_default().push(r.mu_w);
    }
    Summary {
        model_seed,
        method,
        bits: cfg.quantize.bits,
        group_size: cfg.quantize.group_size,
        kl_proxy: kl,
        mean_snr_db: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        exact_layers: reports.len() - finite.len(),
        mu_w_by_role: by_role
            .into_iter()
            .map(|(role, v)| {
                let agg = RoleAggregate {
                    mean_mu_w: v.iter().sum::<f64>() / v.len() as f64,
                    max_mu_w: v.iter().copied().fold(f64::MIN, f64::max),
                };
                (role, agg)
            })
            .collect(),
    }
}

/// Writes `<out>/quantized`, `reports.csv` and `summary.json`.
pub fn quantize(ctx: &Context) -> CliResult<PathBuf> {
    let cfg = &ctx.config;
    let dir = ctx.out.join(QUANTIZED_DIR);
    ctx.guard(&dir)?;
    let model = ctx.load_model()?;
    let rot_dir = ctx.out.join(ROTATIONS_DIR);
    if !rot_dir.exists() {
        return Err(CliError::Missing(rot_dir));
    }
    let rotations = load_rotations(&rot_dir)?;
    let (calib, holdout) = cfg.calibration_sets(model.spec.d_model)?;
    let q = quantize_model(&model, &rotations, &calib, &holdout, &cfg.pipeline())?;
    save_model(&dir, &q.model)?;
    write_reports_csv(&ctx.out.join(REPORTS_CSV), &q.reports)?;
    let learn_json = ctx.out.join(LEARN_JSON);
    let method = if learn_json.exists() {
        read_json::<LearnRecord>(&learn_json)?.method.as_str().to_string()
    } else {
        cfg.rotation.method.as_str().to_string()
    };
    let summary = summarize(model.spec.seed, method, cfg, q.kl_proxy, &q.reports);
    write_json(&ctx.out.join(SUMMARY_JSON), &summary)?;
    Ok(dir)
}

/// Writes `<out>/bounds.csv` for the configured grid.
pub fn bounds(ctx: &Context) -> CliResult<PathBuf> {
    let path = ctx.out.join(BOUNDS_CSV);
    ctx.guard(&path)?;
    let rows = bounds_experiment(&ctx.config.bounds)?;
    write_bounds_csv(&path, &rows)?;
    Ok(path)
}
