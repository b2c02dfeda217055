use rayon::prelude::*;

use super::ToyModelSpec;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rotation::{rotated_weight, LayerRecord, Role, RotationSet};

/// Added to the mean square before the RMS normalization.
pub const RMS_EPS: f64 = 1e-6;

/// A pre-norm residual stack. Every block computes
///
/// ```text
/// a = rms(h)
/// z_j = σ(⟨q_j, k_j⟩/√d_head) · v_j        per head j, q = W_q a, k = W_k a, v = W_v a
/// h ← h + W_o z
/// f = rms(h)
/// u = silu(W_gate f) ⊙ (W_up f)
/// h ← h + W_down (R4ᵀ u)
/// ```
///
/// with `h = W_embed x` at the input and `W_head rms(h)` at the output. The
/// per-head gate is a scalar, so it commutes with any rotation of the value
/// channel; `R4ᵀ` is the online rotation, present only after rotations are
/// applied. Batches hold one sample per row.
#[derive(Clone, Debug)]
pub struct ToyModel {
    pub spec: ToyModelSpec,
    pub embed: Matrix,
    pub head: Matrix,
    /// `n_layers × 7` records in `(layer, role)` order.
    pub layers: Vec<LayerRecord>,
    pub online_r4: Option<Matrix>,
}

/// Inputs of every linear layer of one block, one sample per row.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockInputs {
    /// Input of q, k and v.
    pub attn: Matrix,
    pub o: Matrix,
    /// Input of gate and up.
    pub ffn: Matrix,
    /// Input of down, after the online rotation.
    pub down: Matrix,
}

impl BlockInputs {
    pub fn for_role(&self, role: Role) -> &Matrix {
        match role {
            Role::Q | Role::K | Role::V => &self.attn,
            Role::O => &self.o,
            Role::Gate | Role::Up => &self.ffn,
            Role::Down => &self.down,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub output: Matrix,
    /// Per-block layer inputs when capture was requested.
    pub inputs: Option<Vec<BlockInputs>>,
}

/// Groups of roles that read the same activations, in execution order.
pub const INPUT_GROUPS: [&[Role]; 4] = [&[Role::Q, Role::K, Role::V], &[Role::O], &[Role::Gate, Role::Up], &[Role::Down]];

/// Seeded weights per the spec: embedding, then each block's seven roles in
/// order, then the head.
pub fn build_toy_model(spec: &ToyModelSpec) -> Result<ToyModel> {
    spec.validate()?;
    let mut rng = spec.rng();
    let d = spec.d_model;
    let embed = spec.sample(d, d, &mut rng);
    let mut layers = Vec::with_capacity(spec.n_layers * Role::ALL.len());
    for layer in 0..spec.n_layers {
        for role in Role::ALL {
            let (m, n) = spec.shape(role);
            layers.push(LayerRecord::new(layer, role, spec.sample(m, n, &mut rng)));
        }
    }
    let head = spec.sample(d, d, &mut rng);
    Ok(ToyModel {
        spec: spec.clone(),
        embed,
        head,
        layers,
        online_r4: None,
    })
}

fn rms_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    let n = x.cols().max(1) as f64;
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let ms = row.iter().map(|v| v * v).sum::<f64>() / n;
        let inv = 1.0 / (ms + RMS_EPS).sqrt();
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// `Y = X Wᵀ` for row-sample batches.
fn linear(x: &Matrix, w: &Matrix) -> Matrix {
    x.matmul_t(w)
}

impl ToyModel {
    pub fn n_layers(&self) -> usize {
        self.spec.n_layers
    }

    pub fn record(&self, layer: usize, role: Role) -> &LayerRecord {
        &self.layers[layer * Role::ALL.len() + role as usize]
    }

    pub fn record_mut(&mut self, layer: usize, role: Role) -> &mut LayerRecord {
        &mut self.layers[layer * Role::ALL.len() + role as usize]
    }

    pub fn weight(&self, layer: usize, role: Role) -> &Matrix {
        &self.record(layer, role).weight
    }

    /// Runs a batch through the model, optionally keeping every layer input.
    pub fn forward(&self, batch: &Matrix, capture: bool) -> Result<ForwardPass> {
        let d = self.spec.d_model;
        if batch.cols() != d {
            return Err(Error::dims(format!("batch of width {} for model width {d}", batch.cols())));
        }
        let mut h = linear(batch, &self.embed);
        let mut inputs = capture.then(Vec::new);
        for layer in 0..self.n_layers() {
            let (next, captured) = self.block(layer, &h);
            h = next;
            if let Some(v) = inputs.as_mut() {
                v.push(captured);
            }
        }
        Ok(ForwardPass {
            output: linear(&rms_rows(&h), &self.head),
            inputs,
        })
    }

    /// Block `layer` applied to the residual `h`; returns the new residual
    /// and the layer inputs.
    pub fn block(&self, layer: usize, h: &Matrix) -> (Matrix, BlockInputs) {
        let dh = self.spec.d_head_block;
        let attn = rms_rows(h);
        let q = linear(&attn, self.weight(layer, Role::Q));
        let k = linear(&attn, self.weight(layer, Role::K));
        let mut z = linear(&attn, self.weight(layer, Role::V));
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for i in 0..z.rows() {
            let (qi, ki) = (q.row(i), k.row(i));
            for (j, zj) in z.row_mut(i).chunks_exact_mut(dh).enumerate() {
                let s: f64 = qi[j * dh..(j + 1) * dh]
                    .iter()
                    .zip(&ki[j * dh..(j + 1) * dh])
                    .map(|(a, b)| a * b)
                    .sum();
                let gate = 1.0 / (1.0 + (-s * inv_sqrt).exp());
                zj.iter_mut().for_each(|v| *v *= gate);
            }
        }
        let mut h = h.add(&linear(&z, self.weight(layer, Role::O)));
        let ffn = rms_rows(&h);
        let g = linear(&ffn, self.weight(layer, Role::Gate));
        let up = linear(&ffn, self.weight(layer, Role::Up));
        let mut u = g.zip_map(&up, |a, b| silu(a) * b);
        if let Some(r4) = &self.online_r4 {
            // row form of u ← R4ᵀ u
            u = u.matmul(r4);
        }
        h.add_assign_scaled(1.0, &linear(&u, self.weight(layer, Role::Down)));
        (
            h,
            BlockInputs {
                attn,
                o: z,
                ffn,
                down: u,
            },
        )
    }

    /// Forward passes of several batches, run concurrently.
    pub fn forward_many(&self, batches: &[Matrix], capture: bool) -> Result<Vec<ForwardPass>> {
        batches.par_iter().map(|b| self.forward(b, capture)).collect()
    }

    pub fn check_rotations(&self, r: &RotationSet) -> Result<()> {
        r.validate()?;
        let s = &self.spec;
        if r.n_layers() != s.n_layers || r.d_model() != s.d_model || r.d_head() != s.d_head_block || r.d_ff() != s.d_ff {
            return Err(Error::dims(format!(
                "rotations for (layers {}, d_model {}, d_head {}, d_ff {}) on model (layers {}, d_model {}, d_head {}, d_ff {})",
                r.n_layers(),
                r.d_model(),
                r.d_head(),
                r.d_ff(),
                s.n_layers,
                s.d_model,
                s.d_head_block,
                s.d_ff
            )));
        }
        Ok(())
    }
}

/// Rewrites every weight for the rotated residual stream `R1ᵀ h`, the
/// rotated value channels and the online `R4`; the result computes the same
/// function. Hessians and quantized weights are dropped.
pub fn apply_fused_rotations(model: &ToyModel, r: &RotationSet) -> Result<ToyModel> {
    model.check_rotations(r)?;
    let layers = model
        .layers
        .iter()
        .map(|rec| Ok(LayerRecord::new(rec.layer, rec.role, rotated_weight(rec, r)?)))
        .collect::<Result<Vec<_>>>()?;
    let online_r4 = match &model.online_r4 {
        Some(prev) => prev.matmul(&r.r4),
        None => r.r4.clone(),
    };
    Ok(ToyModel {
        spec: model.spec.clone(),
        embed: r.r1.t_matmul(&model.embed),
        head: model.head.matmul(&r.r1),
        layers,
        online_r4: if online_r4.is_identity() { None } else { Some(online_r4) },
    })
}

/// `max |y − y'| / max |y|` over a batch.
pub fn max_relative_deviation(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).max_abs() / a.max_abs().max(f64::MIN_POSITIVE)
}
