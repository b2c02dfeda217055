use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::set::{check_shape, sides, LayerRecord, Param, RotationSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// The four incoherence objectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// `‖vec W̃‖_p^p`
    #[serde(rename = "optrot")]
    OptRot,
    /// `‖vec W̃‖_p^2`
    #[serde(rename = "optrot-v2")]
    OptRotV2,
    /// `UB(H̃) · ‖vec W̃‖_p`
    #[serde(rename = "optrot+")]
    OptRotPlus,
    /// `UB(H̃) · ‖vec W̃‖_p^2`
    #[serde(rename = "optrot+-v2")]
    OptRotPlusV2,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [
        ObjectiveKind::OptRot,
        ObjectiveKind::OptRotV2,
        ObjectiveKind::OptRotPlus,
        ObjectiveKind::OptRotPlusV2,
    ];

    pub fn uses_hessian(&self) -> bool {
        matches!(self, ObjectiveKind::OptRotPlus | ObjectiveKind::OptRotPlusV2)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectiveKind::OptRot => "optrot",
            ObjectiveKind::OptRotV2 => "optrot-v2",
            ObjectiveKind::OptRotPlus => "optrot+",
            ObjectiveKind::OptRotPlusV2 => "optrot+-v2",
        }
    }

    /// Power `γ` applied to `S = Σ W̃ᵢⱼ^p`.
    fn sum_exponent(&self, p: u32) -> f64 {
        match self {
            ObjectiveKind::OptRot => 1.0,
            ObjectiveKind::OptRotV2 | ObjectiveKind::OptRotPlusV2 => 2.0 / p as f64,
            ObjectiveKind::OptRotPlus => 1.0 / p as f64,
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown objective {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Even norm order, 4 by default.
    pub p: u32,
    /// Multiplier of the Hessian-aware kinds; ignored by the data-free ones.
    pub loss_scale: f64,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        ObjectiveSpec {
            kind,
            p: 4,
            loss_scale: 1.0,
        }
    }

    pub fn uses_hessian(&self) -> bool {
        self.kind.uses_hessian()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < 4 || !self.p.is_multiple_of(2) {
            return Err(Error::config(format!("norm order must be even and >= 4, got {}", self.p)));
        }
        if !(self.loss_scale.is_finite() && self.loss_scale > 0.0) {
            return Err(Error::config("loss scale must be positive and finite"));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        if self.uses_hessian() {
            self.loss_scale
        } else {
            1.0
        }
    }
}

/// Euclidean gradients with respect to `R1` and every `R2`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationGrads {
    pub r1: Matrix,
    pub r2: Vec<Matrix>,
}

impl RotationGrads {
    pub fn zeros_like(r: &RotationSet) -> Self {
        RotationGrads {
            r1: Matrix::zeros(r.d_model(), r.d_model()),
            r2: vec![Matrix::zeros(r.d_head(), r.d_head()); r.n_layers()],
        }
    }

    fn add_param(&mut self, param: Param, layer: usize, g: &Matrix) {
        match param {
            Param::R1 => self.r1.add_assign_scaled(1.0, g),
            Param::R2 => {
                // the block-diagonal B2 = I ⊗ R2 collects one block per head
                let target = &mut self.r2[layer];
                let d = target.rows();
                for h in 0..g.rows() / d {
                    for i in 0..d {
                        let src = &g.row(h * d + i)[h * d..(h + 1) * d];
                        for (t, s) in target.row_mut(i).iter_mut().zip(src) {
                            *t += s;
                        }
                    }
                }
            }
            Param::Fixed => {}
        }
    }

    fn add(&mut self, other: &RotationGrads) {
        self.r1.add_assign_scaled(1.0, &other.r1);
        for (a, b) in self.r2.iter_mut().zip(&other.r2) {
            a.add_assign_scaled(1.0, b);
        }
    }
}

/// Value and gradient of one `(layer, role)` term.
fn pair_term(
    spec: &ObjectiveSpec,
    rec: &LayerRecord,
    r: &RotationSet,
    want_grad: bool,
) -> Result<(f64, Option<RotationGrads>)> {
    if rec.layer >= r.n_layers() {
        return Err(Error::dims(format!("layer {} has no R2 rotation", rec.layer)));
    }
    let s = sides(rec.role, rec.layer, r)?;
    check_shape(&rec.weight, rec.role, &s)?;
    let (right, right_param) = &s.right;
    let x = rec.weight.matmul(right);
    let wt = match &s.left {
        Some((p, _)) => p.t_matmul(&x),
        None => x.clone(),
    };
    let p = spec.p as i32;
    let sum: f64 = wt.as_slice().iter().map(|v| v.powi(p)).sum();
    let gamma = spec.kind.sum_exponent(spec.p);
    let scale = spec.scale();

    // UB of the rotated Hessian and its derivative for the data-aware kinds
    let hess = if spec.uses_hessian() {
        let h = rec.hessian.as_ref().ok_or_else(|| Error::MissingHessian {
            layer: rec.layer,
            role: rec.role.to_string(),
        })?;
        let ht = h.matrix().conjugate_by(right);
        let tr = ht.trace();
        if tr <= 0.0 {
            return Err(Error::Degenerate(format!(
                "{}[{}]: zero-trace Hessian",
                rec.role, rec.layer
            )));
        }
        let off = ht.off_diag_sq();
        Some((h, ht, tr, off, tr - off / (2.0 * tr)))
    } else {
        None
    };
    let ub = hess.as_ref().map(|t| t.4).unwrap_or(1.0);
    let value = scale * ub * sum.powf(gamma);
    if !want_grad {
        return Ok((value, None));
    }

    let mut grads = RotationGrads::zeros_like(r);
    if sum == 0.0 {
        return Ok((value, Some(grads)));
    }
    // ∂l/∂W̃ = scale · UB · γ · S^{γ−1} · p · W̃^{p−1}
    let coef = scale * ub * gamma * sum.powf(gamma - 1.0) * spec.p as f64;
    let g = wt.map(|v| coef * v.powi(p - 1));

    if let Some((_, param)) = &s.left {
        // W̃ = Pᵀ X  ⇒  ∂l/∂P = X Gᵀ
        grads.add_param(*param, rec.layer, &x.matmul_t(&g));
    }
    // W̃ = Y Rm  ⇒  ∂l/∂Rm = Yᵀ G = Wᵀ (P G)
    let pg = match &s.left {
        Some((left, _)) => left.matmul(&g),
        None => g,
    };
    let mut g_right = rec.weight.t_matmul(&pg);
    if let Some((h, ht, tr, off, _)) = &hess {
        // ∂UB/∂H̃ = I − offdiag(H̃)/tr + ‖H̃‖²_off/(2 tr²) I, and
        // H̃ = Rmᵀ H Rm  ⇒  ∂/∂Rm = 2 H Rm (∂l/∂H̃)
        let c = scale * sum.powf(gamma);
        let diag_term = 1.0 + off / (2.0 * tr * tr);
        let n = ht.rows();
        let g_h = Matrix::from_fn(n, n, |i, j| {
            if i == j {
                c * diag_term
            } else {
                -c * ht[(i, j)] / tr
            }
        });
        let hr = h.matrix().matmul(right);
        g_right.add_assign_scaled(2.0, &hr.matmul(&g_h));
    }
    grads.add_param(*right_param, rec.layer, &g_right);
    Ok((value, Some(grads)))
}

/// Per-record objective terms, in input order.
pub fn pair_values(spec: &ObjectiveSpec, layers: &[LayerRecord], r: &RotationSet) -> Result<Vec<f64>> {
    spec.validate()?;
    layers
        .par_iter()
        .map(|rec| pair_term(spec, rec, r, false).map(|t| t.0))
        .collect()
}

/// `Σ l_rot` over the given records.
pub fn objective_value(spec: &ObjectiveSpec, layers: &[LayerRecord], r: &RotationSet) -> Result<f64> {
    Ok(pair_values(spec, layers, r)?.iter().sum())
}

/// Objective value and its Euclidean gradient with respect to `R1` and each
/// `R2`. Contributions are reduced in record order, so the result does not
/// depend on the thread count.
pub fn objective_gradient(
    spec: &ObjectiveSpec,
    layers: &[LayerRecord],
    r: &RotationSet,
) -> Result<(f64, RotationGrads)> {
    spec.validate()?;
    let terms: Vec<(f64, Option<RotationGrads>)> = layers
        .par_iter()
        .map(|rec| pair_term(spec, rec, r, true))
        .collect::<Result<_>>()?;
    let mut total = RotationGrads::zeros_like(r);
    let mut value = 0.0;
    for (v, g) in &terms {
        value += v;
        if let Some(g) = g {
            total.add(g);
        }
    }
    Ok((value, total))
}

/// Indices of the `k` records with the largest objective term under `r`,
/// ordered by decreasing term; ties go to the smaller `(layer, role)`.
pub fn select_top_k(
    layers: &[LayerRecord],
    spec: &ObjectiveSpec,
    r: &RotationSet,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::config("top-k selection needs k >= 1"));
    }
    if k > layers.len() {
        return Err(Error::config(format!(
            "top-k of {k} from only {} weight matrices",
            layers.len()
        )));
    }
    let values = pair_values(spec, layers, r)?;
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then(layers[a].key().cmp(&layers[b].key()))
    });
    order.truncate(k);
    Ok(order)
}
