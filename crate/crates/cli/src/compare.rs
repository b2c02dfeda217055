use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rotq_core::diagnostics::{read_reports_csv, BoundReport};

use crate::commands::{read_json, write_json, Context, Summary, REPORTS_CSV, SUMMARY_JSON};
use crate::error::{CliError, CliResult};

pub const COMPARE_JSON: &str = "compare.json";
pub const COMPARE_CSV: &str = "compare_layers.csv";

/// Per-layer `candidate − baseline` differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDelta {
    pub pair: usize,
    pub layer: usize,
    pub role: String,
    pub mu_w_delta: f64,
    /// `None` when either side is exact.
    pub snr_db_delta: Option<f64>,
    pub error_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub baseline: String,
    pub candidate: String,
    pub model_seed: u64,
    pub baseline_method: String,
    pub candidate_method: String,
    pub kl_baseline: f64,
    pub kl_candidate: f64,
    pub kl_delta: f64,
    pub mean_snr_delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub pairs: usize,
    /// Pairs where the candidate has the smaller KL proxy.
    pub candidate_wins: usize,
    pub baseline_wins: usize,
    pub ties: usize,
    /// Two-sided exact binomial p-value over the untied pairs.
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub pairs: Vec<PairComparison>,
    pub sign_test: SignTest,
}

struct Run {
    label: String,
    summary: Summary,
    reports: Vec<BoundReport>,
}

fn load_run(dir: &Path) -> CliResult<Run> {
    let summary: Summary = read_json(&dir.join(SUMMARY_JSON))?;
    let reports_path = dir.join(REPORTS_CSV);
    if !reports_path.exists() {
        return Err(CliError::Missing(reports_path));
    }
    Ok(Run {
        label: dir.display().to_string(),
        summary,
        reports: read_reports_csv(&reports_path)?,
    })
}

/// Exact two-sided sign-test p-value for `k` successes out of `n`.
pub fn sign_test_p_value(k: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let tail = k.min(n - k);
    // P(X = i) built up multiplicatively from P(X = 0) = 2^-n
    let mut p = 0.5f64.powi(n as i32);
    let mut sum = 0.0;
    for i in 0..=tail {
        sum += p;
        p *= (n - i) as f64 / (i + 1) as f64;
    }
    (2.0 * sum).min(1.0)
}

fn delta(a: f64, b: f64) -> f64 {
    b - a
}

/// Compares `(baseline, candidate)` run directories pairwise. Both runs of
/// a pair must come from the same model seed and the same layers.
pub fn compare(runs: &[PathBuf]) -> CliResult<(Comparison, Vec<LayerDelta>)> {
    if runs.len() < 2 || !runs.len().is_multiple_of(2) {
        return Err(CliError::config(
            "compare takes baseline/candidate run directories in pairs",
        ));
    }
    let mut pairs = Vec::new();
    let mut layers = Vec::new();
    for (i, chunk) in runs.chunks_exact(2).enumerate() {
        let (a, b) = (load_run(&chunk[0])?, load_run(&chunk[1])?);
        if a.summary.model_seed != b.summary.model_seed {
            return Err(CliError::config(format!(
                "{} (model seed {}) and {} (model seed {}) quantize different models",
                a.label, a.summary.model_seed, b.label, b.summary.model_seed
            )));
        }
        let keys = |r: &Run| r.reports.iter().map(|x| (x.layer, x.role.clone())).collect::<Vec<_>>();
        if keys(&a) != keys(&b) {
            return Err(CliError::config(format!("{} and {} report different layers", a.label, b.label)));
        }
        for (x, y) in a.reports.iter().zip(&b.reports) {
            layers.push(LayerDelta {
                pair: i,
                layer: x.layer,
                role: x.role.clone(),
                mu_w_delta: delta(x.mu_w, y.mu_w),
                snr_db_delta: (!x.snr_db.is_exact() && !y.snr_db.is_exact())
                    .then(|| delta(x.snr_db.value(), y.snr_db.value())),
                error_delta: delta(x.actual_error, y.actual_error),
            });
        }
        pairs.push(PairComparison {
            baseline: a.label,
            candidate: b.label,
            model_seed: a.summary.model_seed,
            baseline_method: a.summary.method,
            candidate_method: b.summary.method,
            kl_baseline: a.summary.kl_proxy,
            kl_candidate: b.summary.kl_proxy,
            kl_delta: delta(a.summary.kl_proxy, b.summary.kl_proxy),
            mean_snr_delta: a.summary.mean_snr_db.zip(b.summary.mean_snr_db).map(|(x, y)| delta(x, y)),
        });
    }
    let wins = pairs.iter().filter(|p| p.kl_candidate < p.kl_baseline).count();
    let losses = pairs.iter().filter(|p| p.kl_candidate > p.kl_baseline).count();
    let sign_test = SignTest {
        pairs: pairs.len(),
        candidate_wins: wins,
        baseline_wins: losses,
        ties: pairs.len() - wins - losses,
        p_value: sign_test_p_value(wins, wins + losses),
    };
    Ok((Comparison { pairs, sign_test }, layers))
}

/// Writes `compare.json` and `compare_layers.csv` into the output directory.
pub fn run(ctx: &Context, runs: &[PathBuf]) -> CliResult<PathBuf> {
    let json = ctx.out.join(COMPARE_JSON);
    let csv_path = ctx.out.join(COMPARE_CSV);
    ctx.guard(&json)?;
    ctx.guard(&csv_path)?;
    let (comparison, layers) = compare(runs)?;
    let mut w = csv::Writer::from_path(&csv_path)?;
    for row in &layers {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io("writing layer deltas", e))?;
    write_json(&json, &comparison)?;
    Ok(json)
}
