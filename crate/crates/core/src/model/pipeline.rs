use serde::{Deserialize, Serialize};

use super::{apply_fused_rotations, BlockInputs, ToyModel, INPUT_GROUPS};
use crate::diagnostics::{kl_proxy, BoundReport, HessianStats};
use crate::error::{Error, Result};
use crate::hessian::{damp, CalibrationSet, HessianAccumulator};
use crate::linalg::{Matrix, SymmetricPsd};
use crate::quant::{gptq_quantize, QuantConfig};
use crate::rotation::{LayerRecord, Role, RotationSet};

/// Settings of the rotate → calibrate → quantize pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub quant: QuantConfig,
    /// Relative diagonal damping of each Hessian before GPTQ.
    pub damping: f64,
    /// Failure probability for the GPTQS bounds in the reports.
    pub delta: f64,
    /// Take every Hessian from the unquantized rotated model instead of the
    /// partially quantized one.
    pub clean_activations: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            quant: QuantConfig::nearest(4).with_group_size(0),
            damping: 0.01,
            delta: 0.1,
            clean_activations: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, model: &ToyModel) -> Result<()> {
        for role in [Role::Q, Role::Down] {
            self.quant.validate(model.spec.shape(role).1)?;
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::config("damping must be finite and >= 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct QuantizedModel {
    /// Rotated model with dequantized weights; each record carries its codes.
    pub model: ToyModel,
    /// Rotated, unquantized reference.
    pub reference: ToyModel,
    /// One report per linear layer in `(layer, role)` order.
    pub reports: Vec<BoundReport>,
    /// Sum of layerwise errors under held-out Hessians.
    pub kl_proxy: f64,
}

/// Per-block Hessians of every input group, accumulated over `calib`.
fn block_hessians(model: &ToyModel, calib: &CalibrationSet, layer: usize) -> Result<[SymmetricPsd; 4]> {
    let passes = captured_inputs(model, calib, layer)?;
    let mut out = Vec::with_capacity(4);
    for group in INPUT_GROUPS {
        let role = group[0];
        let mut acc = HessianAccumulator::new(model.spec.shape(role).1);
        for inputs in &passes {
            acc.add(inputs.for_role(role))?;
        }
        out.push(acc.finish()?);
    }
    Ok(out.try_into().expect("four groups"))
}

/// Inputs of block `layer` for each calibration batch.
fn captured_inputs(model: &ToyModel, calib: &CalibrationSet, layer: usize) -> Result<Vec<BlockInputs>> {
    if calib.is_empty() {
        return Err(Error::config("empty calibration set"));
    }
    model
        .forward_many(calib.batches(), true)?
        .into_iter()
        .map(|p| Ok(p.inputs.expect("captured").swap_remove(layer)))
        .collect()
}

fn group_index(role: Role) -> usize {
    INPUT_GROUPS.iter().position(|g| g.contains(&role)).expect("every role has a group")
}

/// Copies of the model's records with the Hessians of their inputs over
/// `calib`, damped by `damping`, as needed by the Hessian-aware objectives.
pub fn calibrated_records(model: &ToyModel, calib: &CalibrationSet, damping: f64) -> Result<Vec<LayerRecord>> {
    let mut out = Vec::with_capacity(model.layers.len());
    for layer in 0..model.n_layers() {
        let hs = block_hessians(model, calib, layer)?;
        for role in Role::ALL {
            let h = damp(&hs[group_index(role)], damping)?;
            out.push(LayerRecord::new(layer, role, model.weight(layer, role).clone()).with_hessian(h)?);
        }
    }
    Ok(out)
}

/// Rotates `model` by `r`, then quantizes it block by block with GPTQ.
///
/// Within a block, the four input groups (q/k/v, o, gate/up, down) are
/// processed in order and each group's Hessian is taken from the model as
/// quantized so far (or from the clean rotated model when configured). The
/// KL proxy sums `tr((Ŵ − W) H (Ŵ − W)ᵀ)` with Hessians of the quantized
/// model's layer inputs on `holdout`.
pub fn quantize_model(
    model: &ToyModel,
    r: &RotationSet,
    calib: &CalibrationSet,
    holdout: &CalibrationSet,
    cfg: &PipelineConfig,
) -> Result<QuantizedModel> {
    cfg.validate(model)?;
    for set in [calib, holdout] {
        if set.width() != model.spec.d_model {
            return Err(Error::dims(format!(
                "calibration width {} for model width {}",
                set.width(),
                model.spec.d_model
            )));
        }
    }
    let reference = apply_fused_rotations(model, r)?;
    let mut current = reference.clone();
    let mut reports = Vec::with_capacity(model.layers.len());

    for layer in 0..model.n_layers() {
        let clean = if cfg.clean_activations {
            Some(block_hessians(&reference, calib, layer)?)
        } else {
            None
        };
        for (g, group) in INPUT_GROUPS.iter().enumerate() {
            let raw = match &clean {
                Some(hs) => hs[g].clone(),
                None => block_hessians(&current, calib, layer)?[g].clone(),
            };
            let h = damp(&raw, cfg.damping)?;
            let stats = HessianStats::compute(&h)?;
            for &role in group.iter() {
                let w = reference.weight(layer, role);
                let q = gptq_quantize(w, &h, &cfg.quant)?;
                reports.push(BoundReport::compute_with(
                    layer,
                    role.as_str(),
                    w,
                    &q.dequantized,
                    &h,
                    &stats,
                    cfg.quant.bits,
                    cfg.delta,
                )?);
                let rec = current.record_mut(layer, role);
                rec.weight = q.dequantized.clone();
                rec.quantized = Some(q);
            }
        }
    }
    reports.sort_by_key(|r| (r.layer, r.role.parse::<Role>().expect("role names round-trip")));

    let kl = holdout_kl_proxy(&reference, &current, holdout)?;
    Ok(QuantizedModel {
        model: current,
        reference,
        reports,
        kl_proxy: kl,
    })
}

/// KL proxy of `quantized` against `reference` with Hessians of the
/// quantized model's inputs on `holdout`.
pub fn holdout_kl_proxy(reference: &ToyModel, quantized: &ToyModel, holdout: &CalibrationSet) -> Result<f64> {
    let mut triples: Vec<(&Matrix, &Matrix, SymmetricPsd)> = Vec::with_capacity(quantized.layers.len());
    for layer in 0..quantized.n_layers() {
        let hs = block_hessians(quantized, holdout, layer)?;
        for role in Role::ALL {
            triples.push((
                reference.weight(layer, role),
                quantized.weight(layer, role),
                hs[group_index(role)].clone(),
            ));
        }
    }
    kl_proxy(triples.iter().map(|(w, q, h)| (*w, *q, h)))
}
