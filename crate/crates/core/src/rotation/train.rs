use serde::{Deserialize, Serialize};

use super::{
    cayley_sgd_step, objective_gradient, objective_value, select_top_k, CayleyState, LayerRecord,
    ObjectiveKind, ObjectiveSpec, Role, RotationSet,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Heavy-ball coefficient in `[0, 1)`.
    pub momentum: f64,
    /// Train only on the `k` matrices with the largest initial term.
    pub top_k: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            steps: 1000,
            momentum: 0.0,
            top_k: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults for an objective: learning rate 1 for the data-free kinds and
    /// 1e5 for the Hessian-aware ones.
    pub fn for_kind(kind: ObjectiveKind) -> Self {
        TrainConfig {
            learning_rate: if kind.uses_hessian() { 1e5 } else { 1.0 },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("training needs at least one step"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.top_k == Some(0) {
            return Err(Error::config("top_k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub rotations: RotationSet,
    /// Objective at the initialization and after every step (`steps + 1` values).
    pub loss_history: Vec<f64>,
    /// Indices into the input records that entered the objective.
    pub selected: Vec<usize>,
    /// The objective actually optimized, including the computed loss scale.
    pub spec: ObjectiveSpec,
}

/// Minimizes the objective summed over the (selected) records with
/// Cayley-SGD on `R1` and every `R2`, starting from `init`. `R4` is fixed.
///
/// For the Hessian-aware kinds the loss scale is set once so that the
/// initial loss equals the initial data-free loss of the same selection;
/// Hessians stay fixed and are rotated analytically at each step.
pub fn learn_rotations(
    spec: &ObjectiveSpec,
    layers: &[LayerRecord],
    cfg: &TrainConfig,
    init: &RotationSet,
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    init.validate()?;
    if layers.is_empty() {
        return Err(Error::config("no weight matrices to train on"));
    }
    if spec.uses_hessian() {
        if let Some(rec) = layers.iter().find(|l| l.hessian.is_none()) {
            return Err(Error::MissingHessian {
                layer: rec.layer,
                role: rec.role.to_string(),
            });
        }
    }

    let mut selected = match cfg.top_k {
        Some(k) => {
            let unscaled = ObjectiveSpec {
                loss_scale: 1.0,
                ..*spec
            };
            select_top_k(layers, &unscaled, init, k.min(layers.len()))?
        }
        None => (0..layers.len()).collect(),
    };
    selected.sort_unstable();
    let subset: Vec<LayerRecord> = selected.iter().map(|&i| layers[i].clone()).collect();

    let mut spec = *spec;
    if spec.uses_hessian() {
        spec.loss_scale = 1.0;
        let raw = objective_value(&spec, &subset, init)?;
        let reference = objective_value(
            &ObjectiveSpec {
                kind: ObjectiveKind::OptRot,
                ..spec
            },
            &subset,
            init,
        )?;
        if raw > 0.0 && reference > 0.0 {
            spec.loss_scale = reference / raw;
        }
    }

    let trains_r2: Vec<bool> = (0..init.n_layers())
        .map(|l| subset.iter().any(|rec| rec.layer == l && matches!(rec.role, Role::V | Role::O)))
        .collect();
    let mut r = init.clone();
    let mut s1 = CayleyState::new(cfg.momentum);
    let mut s2 = vec![CayleyState::new(cfg.momentum); r.n_layers()];
    let mut history = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (loss, grads) = objective_gradient(&spec, &subset, &r)?;
        history.push(loss);
        r.r1 = cayley_sgd_step(&r.r1, &grads.r1, cfg.learning_rate, &mut s1)?;
        for (l, train) in trains_r2.iter().enumerate() {
            if *train {
                r.r2[l] = cayley_sgd_step(&r.r2[l], &grads.r2[l], cfg.learning_rate, &mut s2[l])?;
            }
        }
    }
    history.push(objective_value(&spec, &subset, &r)?);
    Ok(TrainOutcome {
        rotations: r,
        loss_history: history,
        selected,
        spec,
    })
}
