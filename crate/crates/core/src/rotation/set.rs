use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hadamard_orthonormal, random_orthogonal, randomized_hadamard, Matrix, SymmetricPsd};
use crate::quant::QuantizedWeight;

/// Linear-layer roles of a block, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Q,
    K,
    V,
    O,
    Gate,
    Up,
    Down,
}

impl Role {
    pub const ALL: [Role; 7] = [Role::Q, Role::K, Role::V, Role::O, Role::Gate, Role::Up, Role::Down];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Q => "q",
            Role::K => "k",
            Role::V => "v",
            Role::O => "o",
            Role::Gate => "gate",
            Role::Up => "up",
            Role::Down => "down",
        }
    }

    /// Roles whose input is the normalized residual stream.
    pub fn reads_residual(&self) -> bool {
        matches!(self, Role::Q | Role::K | Role::V | Role::Gate | Role::Up)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown role {s:?}")))
    }
}

/// One weight matrix of the model with its calibration data.
#[derive(Clone, Debug)]
pub struct LayerRecord {
    pub layer: usize,
    pub role: Role,
    /// `out × in`; the layer computes `y = W x`.
    pub weight: Matrix,
    /// Second moment of the layer's input, in the same basis as `weight`.
    pub hessian: Option<SymmetricPsd>,
    pub quantized: Option<QuantizedWeight>,
}

impl LayerRecord {
    pub fn new(layer: usize, role: Role, weight: Matrix) -> Self {
        LayerRecord {
            layer,
            role,
            weight,
            hessian: None,
            quantized: None,
        }
    }

    pub fn with_hessian(mut self, h: SymmetricPsd) -> Result<Self> {
        if h.dim() != self.weight.cols() {
            return Err(Error::dims(format!(
                "{}[{}]: Hessian of dimension {} for {} inputs",
                self.role,
                self.layer,
                h.dim(),
                self.weight.cols()
            )));
        }
        self.hessian = Some(h);
        Ok(self)
    }

    /// `(layer, role)` sort key.
    pub fn key(&self) -> (usize, Role) {
        (self.layer, self.role)
    }
}

/// Shared `R1`, per-layer `R2` and the fixed `R4`.
#[derive(Clone, Debug, PartialEq)]
pub struct RotationSet {
    /// Residual-stream rotation, `d_model × d_model`.
    pub r1: Matrix,
    /// One `d_head × d_head` rotation per layer, applied to every head of the
    /// value/output channel.
    pub r2: Vec<Matrix>,
    /// Down-projection input rotation, `d_ff × d_ff`; never trained.
    pub r4: Matrix,
}

impl RotationSet {
    pub fn identity(n_layers: usize, d_model: usize, d_head: usize, d_ff: usize) -> Self {
        RotationSet {
            r1: Matrix::identity(d_model),
            r2: vec![Matrix::identity(d_head); n_layers],
            r4: Matrix::identity(d_ff),
        }
    }

    /// Randomized Hadamard `R1`, identity `R2` and Hadamard `R4`: the
    /// starting point for learned rotations.
    pub fn hadamard(n_layers: usize, d_model: usize, d_head: usize, d_ff: usize, seed: u64) -> Result<Self> {
        Ok(RotationSet {
            r1: randomized_hadamard(d_model, seed)?,
            r2: vec![Matrix::identity(d_head); n_layers],
            r4: hadamard_orthonormal(d_ff)?,
        })
    }

    /// Haar-like random `R1` and `R2`s with a Hadamard `R4`.
    pub fn random(n_layers: usize, d_model: usize, d_head: usize, d_ff: usize, seed: u64) -> Result<Self> {
        let r2 = (0..n_layers)
            .map(|l| random_orthogonal(d_head, seed.wrapping_mul(1000).wrapping_add(l as u64 + 1)))
            .collect::<Result<_>>()?;
        Ok(RotationSet {
            r1: random_orthogonal(d_model, seed)?,
            r2,
            r4: hadamard_orthonormal(d_ff)?,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.r2.len()
    }

    pub fn d_model(&self) -> usize {
        self.r1.rows()
    }

    pub fn d_head(&self) -> usize {
        self.r2.first().map(|m| m.rows()).unwrap_or(0)
    }

    pub fn d_ff(&self) -> usize {
        self.r4.rows()
    }

    /// `I_heads ⊗ R2[layer]` as a `d_model × d_model` matrix.
    pub fn block_r2(&self, layer: usize) -> Result<Matrix> {
        let r2 = self
            .r2
            .get(layer)
            .ok_or_else(|| Error::dims(format!("no R2 for layer {layer}")))?;
        block_diag(r2, self.d_model())
    }

    pub fn max_orthogonality_defect(&self) -> f64 {
        std::iter::once(&self.r1)
            .chain(&self.r2)
            .chain(std::iter::once(&self.r4))
            .map(|m| m.orthogonality_defect())
            .fold(0.0, f64::max)
    }

    /// Square shapes and head divisibility.
    pub fn validate(&self) -> Result<()> {
        let d = self.d_head();
        for m in std::iter::once(&self.r1).chain(&self.r2).chain(std::iter::once(&self.r4)) {
            if !m.is_square() {
                return Err(Error::NotSquare {
                    rows: m.rows(),
                    cols: m.cols(),
                });
            }
        }
        if self.r2.iter().any(|m| m.rows() != d) {
            return Err(Error::dims("R2 rotations differ in size"));
        }
        if d == 0 || !self.d_model().is_multiple_of(d) {
            return Err(Error::dims(format!(
                "head block {d} does not divide model width {}",
                self.d_model()
            )));
        }
        Ok(())
    }
}

pub(crate) fn block_diag(block: &Matrix, n: usize) -> Result<Matrix> {
    let d = block.rows();
    if d == 0 || !n.is_multiple_of(d) || !block.is_square() {
        return Err(Error::dims(format!("cannot tile a {d}x{d} block into {n}x{n}")));
    }
    let mut out = Matrix::zeros(n, n);
    for h in 0..n / d {
        for i in 0..d {
            out.row_mut(h * d + i)[h * d..(h + 1) * d].copy_from_slice(block.row(i));
        }
    }
    Ok(out)
}

/// Which rotation parameter a side of `W̃ = Lm · W · Rm` depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Param {
    R1,
    R2,
    Fixed,
}

/// The two sides of the rotated weight: `W̃ = P_leftᵀ · W · P_right`.
pub(crate) struct Sides {
    /// `None` means identity on the output side.
    pub left: Option<(Matrix, Param)>,
    pub right: (Matrix, Param),
}

/// Output side: `R1ᵀ` for layers writing the residual (o, down), `B2ᵀ` for v.
/// Input side: `R1` for residual readers, `B2` for o, `R4` for down.
pub(crate) fn sides(role: Role, layer: usize, r: &RotationSet) -> Result<Sides> {
    Ok(match role {
        Role::Q | Role::K | Role::Gate | Role::Up => Sides {
            left: None,
            right: (r.r1.clone(), Param::R1),
        },
        Role::V => Sides {
            left: Some((r.block_r2(layer)?, Param::R2)),
            right: (r.r1.clone(), Param::R1),
        },
        Role::O => Sides {
            left: Some((r.r1.clone(), Param::R1)),
            right: (r.block_r2(layer)?, Param::R2),
        },
        Role::Down => Sides {
            left: Some((r.r1.clone(), Param::R1)),
            right: (r.r4.clone(), Param::Fixed),
        },
    })
}

/// The input-side rotation of a role (the matrix `P` with `H̃ = Pᵀ H P`).
pub fn input_rotation(role: Role, layer: usize, r: &RotationSet) -> Result<Matrix> {
    Ok(sides(role, layer, r)?.right.0)
}

/// The role-specific rewrite of a weight under `r`:
///
/// | role | rotated weight |
/// |------|----------------|
/// | q, k, gate, up | `W · R1` |
/// | v | `B2ᵀ · W · R1` |
/// | o | `R1ᵀ · W · B2` |
/// | down | `R1ᵀ · W · R4` |
///
/// with `B2 = I ⊗ R2[layer]` acting on each head block. Weights are stored
/// `out × in`, so these are the transposes of the `x·W` convention.
pub fn rotated_weight(layer: &LayerRecord, r: &RotationSet) -> Result<Matrix> {
    rotate(&layer.weight, layer.role, layer.layer, r)
}

pub(crate) fn rotate(w: &Matrix, role: Role, layer: usize, r: &RotationSet) -> Result<Matrix> {
    let s = sides(role, layer, r)?;
    check_shape(w, role, &s)?;
    let right = w.matmul(&s.right.0);
    Ok(match s.left {
        Some((p, _)) => p.t_matmul(&right),
        None => right,
    })
}

/// `H̃ = Pᵀ H P` for the role's input-side rotation.
pub fn rotated_hessian(h: &SymmetricPsd, role: Role, layer: usize, r: &RotationSet) -> Result<SymmetricPsd> {
    h.conjugate_by(&input_rotation(role, layer, r)?)
}

pub(crate) fn check_shape(w: &Matrix, role: Role, s: &Sides) -> Result<()> {
    let rows_ok = s.left.as_ref().map(|(p, _)| p.rows() == w.rows()).unwrap_or(true);
    if !rows_ok || s.right.0.rows() != w.cols() {
        return Err(Error::dims(format!(
            "{role} weight of shape {:?} does not fit its rotations",
            w.shape()
        )));
    }
    Ok(())
}
