use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Floor applied to the scale of an all-zero group.
pub const SCALE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    #[default]
    Nearest,
    Stochastic,
}

/// Affine map between weights and integer codes `0..=2^b−1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// `g(x; s) = (2^b−1)/2 · (x/s + 1)`: `[−s, s]` fills the whole code range.
    #[default]
    Standard,
    /// `ĝ(x; s) = (2^b−3)/2 · (x/s + 1) + 1`: `[−s, s]` maps to `[1, 2^b−2]`,
    /// leaving one spare level on each side for corrections.
    Shrunk,
}

impl Grid {
    #[inline]
    fn slope(self, bits: u8) -> f64 {
        let levels = (1u32 << bits) as f64;
        match self {
            Grid::Standard => (levels - 1.0) / 2.0,
            Grid::Shrunk => (levels - 3.0) / 2.0,
        }
    }

    #[inline]
    fn offset(self) -> f64 {
        match self {
            Grid::Standard => 0.0,
            Grid::Shrunk => 1.0,
        }
    }

    /// Weight value to (real-valued) code coordinate.
    #[inline]
    pub fn to_code(self, x: f64, scale: f64, bits: u8) -> f64 {
        self.slope(bits) * (x / scale + 1.0) + self.offset()
    }

    /// Code back to weight value.
    #[inline]
    pub fn from_code(self, code: f64, scale: f64, bits: u8) -> f64 {
        scale * ((code - self.offset()) / self.slope(bits) - 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    pub bits: u8,
    /// Contiguous input-dimension weights sharing a scale; 0 means one scale per row.
    pub group_size: usize,
    pub rounding: Rounding,
    pub grid: Grid,
    pub seed: u64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            bits: 4,
            group_size: 256,
            rounding: Rounding::Nearest,
            grid: Grid::Standard,
            seed: 0,
        }
    }
}

impl QuantConfig {
    /// Round-to-nearest on the standard grid with one scale per row.
    pub fn nearest(bits: u8) -> Self {
        QuantConfig {
            bits,
            group_size: 0,
            ..QuantConfig::default()
        }
    }

    /// Stochastic rounding on the shrunk grid with one scale per row.
    pub fn stochastic(bits: u8, seed: u64) -> Self {
        QuantConfig {
            bits,
            group_size: 0,
            rounding: Rounding::Stochastic,
            grid: Grid::Shrunk,
            seed,
        }
    }

    pub fn with_group_size(mut self, group_size: usize) -> Self {
        self.group_size = group_size;
        self
    }

    pub fn max_code(&self) -> u8 {
        ((1u16 << self.bits) - 1) as u8
    }

    /// Checks the config against a row length.
    pub fn validate(&self, row_len: usize) -> Result<()> {
        if !(2..=8).contains(&self.bits) {
            return Err(Error::config(format!("bits must be in [2, 8], got {}", self.bits)));
        }
        if self.grid == Grid::Shrunk && self.bits < 3 {
            return Err(Error::config("the shrunk grid needs bits >= 3"));
        }
        if self.group_size != 0 && !row_len.is_multiple_of(self.group_size) {
            return Err(Error::config(format!(
                "group size {} does not divide row length {row_len}",
                self.group_size
            )));
        }
        Ok(())
    }

    /// Effective group length for rows of `row_len`.
    pub fn group_len(&self, row_len: usize) -> usize {
        if self.group_size == 0 {
            row_len.max(1)
        } else {
            self.group_size
        }
    }

    pub fn groups_per_row(&self, row_len: usize) -> usize {
        row_len.div_ceil(self.group_len(row_len)).max(1)
    }

    /// Per-group scales `s = max |w|` over each group, floored at [`SCALE_FLOOR`].
    pub fn row_scales(&self, row: &[f64]) -> Vec<f64> {
        let g = self.group_len(row.len());
        if row.is_empty() {
            return vec![SCALE_FLOOR];
        }
        row.chunks(g)
            .map(|chunk| {
                let m = chunk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if m > 0.0 {
                    m
                } else {
                    SCALE_FLOOR
                }
            })
            .collect()
    }

    pub fn scales(&self, w: &Matrix) -> Matrix {
        let groups = self.groups_per_row(w.cols());
        let mut out = Matrix::zeros(w.rows(), groups);
        for i in 0..w.rows() {
            out.row_mut(i).copy_from_slice(&self.row_scales(w.row(i)));
        }
        out
    }

    /// Clamped code coordinate of `x`.
    #[inline]
    pub fn code_coordinate(&self, x: f64, scale: f64) -> f64 {
        self.grid
            .to_code(x, scale, self.bits)
            .clamp(0.0, self.max_code() as f64)
    }

    #[inline]
    pub fn nearest_code(&self, x: f64, scale: f64) -> u8 {
        self.code_coordinate(x, scale).round() as u8
    }

    #[inline]
    pub fn dequantize(&self, code: u8, scale: f64) -> f64 {
        self.grid.from_code(code as f64, scale, self.bits)
    }
}

/// Integer codes, their scales and the dequantized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedWeight {
    rows: usize,
    cols: usize,
    pub codes: Vec<u8>,
    /// `rows × groups_per_row`.
    pub scales: Matrix,
    pub dequantized: Matrix,
    pub config: QuantConfig,
}

impl QuantizedWeight {
    pub(crate) fn from_rows(
        rows: Vec<(Vec<u8>, Vec<f64>, Vec<f64>)>,
        cols: usize,
        config: &QuantConfig,
    ) -> Self {
        let n_rows = rows.len();
        let groups = config.groups_per_row(cols);
        let mut codes = Vec::with_capacity(n_rows * cols);
        let mut scales = Vec::with_capacity(n_rows * groups);
        let mut deq = Vec::with_capacity(n_rows * cols);
        for (c, s, d) in rows {
            codes.extend(c);
            scales.extend(s);
            deq.extend(d);
        }
        QuantizedWeight {
            rows: n_rows,
            cols,
            codes,
            scales: Matrix::from_vec(n_rows, groups, scales).expect("scale shape"),
            dequantized: Matrix::from_vec(n_rows, cols, deq).expect("dequantized shape"),
            config: config.clone(),
        }
    }

    /// Rebuilds a quantized weight from stored codes and scales.
    pub fn from_codes(
        rows: usize,
        cols: usize,
        codes: Vec<u8>,
        scales: Matrix,
        config: QuantConfig,
    ) -> Result<Self> {
        config.validate(cols)?;
        if codes.len() != rows * cols {
            return Err(Error::dims("code count does not match shape"));
        }
        if scales.shape() != (rows, config.groups_per_row(cols)) {
            return Err(Error::dims("scale shape does not match config"));
        }
        if codes.iter().any(|c| *c > config.max_code()) {
            return Err(Error::config("code outside the grid"));
        }
        let g = config.group_len(cols);
        let dequantized = Matrix::from_fn(rows, cols, |i, j| {
            config.dequantize(codes[i * cols + j], scales[(i, j / g)])
        });
        Ok(QuantizedWeight {
            rows,
            cols,
            codes,
            scales,
            dequantized,
            config,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn code(&self, i: usize, j: usize) -> u8 {
        self.codes[i * self.cols + j]
    }
}
