use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Archive, ArchiveWriter};
use crate::error::{Error, Result};
use crate::hessian::{CalibrationSet, CalibrationSource};
use crate::model::{ToyModel, ToyModelSpec};
use crate::quant::{QuantConfig, QuantizedWeight};
use crate::rotation::{LayerRecord, Role, RotationSet};

pub const MODEL_SIDECAR: &str = "model.json";

/// `<name>.codes` (u8), `<name>.scales` and `<name>.dequant`.
pub fn write_quantized(w: &mut ArchiveWriter, name: &str, q: &QuantizedWeight) -> Result<()> {
    let (rows, cols) = q.shape();
    w.add_u8(&format!("{name}.codes"), rows, cols, &q.codes)?;
    w.add_f64(&format!("{name}.scales"), &q.scales)?;
    w.add_f64(&format!("{name}.dequant"), &q.dequantized)
}

/// Rebuilds a quantized weight from its codes and scales and checks it
/// against the stored dequantized values.
pub fn read_quantized(ar: &Archive, name: &str, config: &QuantConfig) -> Result<QuantizedWeight> {
    let (rows, cols, codes) = ar.bytes_u8(&format!("{name}.codes"))?;
    let scales = ar.matrix(&format!("{name}.scales"))?;
    let q = QuantizedWeight::from_codes(rows, cols, codes, scales, config.clone())?;
    if q.dequantized != ar.matrix(&format!("{name}.dequant"))? {
        return Err(Error::Format {
            path: ar.dir().to_path_buf(),
            msg: format!("{name}: stored dequantized values disagree with codes and scales"),
        });
    }
    Ok(q)
}

/// Entries `r1`, `r2.<layer>` and `r4`.
pub fn save_rotations(dir: &Path, r: &RotationSet) -> Result<()> {
    let mut w = ArchiveWriter::new();
    w.add_f64("r1", &r.r1)?;
    for (l, m) in r.r2.iter().enumerate() {
        w.add_f64(&format!("r2.{l}"), m)?;
    }
    w.add_f64("r4", &r.r4)?;
    w.write(dir)
}

pub fn load_rotations(dir: &Path) -> Result<RotationSet> {
    let ar = Archive::open(dir)?;
    let mut r2 = Vec::new();
    while ar.contains(&format!("r2.{}", r2.len())) {
        r2.push(ar.matrix(&format!("r2.{}", r2.len()))?);
    }
    let r = RotationSet {
        r1: ar.matrix("r1")?,
        r2,
        r4: ar.matrix("r4")?,
    };
    r.validate()?;
    Ok(r)
}

/// The `model.json` written next to a model archive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSidecar {
    pub spec: ToyModelSpec,
    /// Whether an `online_r4` entry is present.
    pub online_r4: bool,
    /// Set when the block weights carry quantized codes.
    pub quant: Option<QuantConfig>,
}

fn layer_name(layer: usize, role: Role) -> String {
    format!("layer.{layer}.{role}")
}

/// Writes the weights (`embed`, `head`, `layer.<l>.<role>`, optional
/// `online_r4` and quantized entries) and the `model.json` sidecar.
pub fn save_model(dir: &Path, model: &ToyModel) -> Result<()> {
    let quant = model.layers.iter().find_map(|l| l.quantized.as_ref()).map(|q| q.config.clone());
    if quant.is_some() && model.layers.iter().any(|l| l.quantized.is_none()) {
        return Err(Error::config("cannot save a partially quantized model"));
    }
    let mut w = ArchiveWriter::new();
    w.add_f64("embed", &model.embed)?;
    w.add_f64("head", &model.head)?;
    if let Some(r4) = &model.online_r4 {
        w.add_f64("online_r4", r4)?;
    }
    for rec in &model.layers {
        let name = layer_name(rec.layer, rec.role);
        match &rec.quantized {
            Some(q) => write_quantized(&mut w, &name, q)?,
            None => w.add_f64(&name, &rec.weight)?,
        }
    }
    w.write(dir)?;
    let sidecar = ModelSidecar {
        spec: model.spec.clone(),
        online_r4: model.online_r4.is_some(),
        quant,
    };
    fs::write(dir.join(MODEL_SIDECAR), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<ToyModel> {
    let sidecar: ModelSidecar = serde_json::from_slice(&fs::read(dir.join(MODEL_SIDECAR))?)?;
    sidecar.spec.validate()?;
    let ar = Archive::open(dir)?;
    let mut layers = Vec::new();
    for layer in 0..sidecar.spec.n_layers {
        for role in Role::ALL {
            let name = layer_name(layer, role);
            let rec = match &sidecar.quant {
                Some(cfg) => {
                    let q = read_quantized(&ar, &name, cfg)?;
                    let mut rec = LayerRecord::new(layer, role, q.dequantized.clone());
                    rec.quantized = Some(q);
                    rec
                }
                None => LayerRecord::new(layer, role, ar.matrix(&name)?),
            };
            if rec.weight.shape() != sidecar.spec.shape(role) {
                return Err(Error::Format {
                    path: dir.to_path_buf(),
                    msg: format!("{name} has shape {:?}", rec.weight.shape()),
                });
            }
            layers.push(rec);
        }
    }
    Ok(ToyModel {
        embed: ar.matrix("embed")?,
        head: ar.matrix("head")?,
        online_r4: if sidecar.online_r4 { Some(ar.matrix("online_r4")?) } else { None },
        layers,
        spec: sidecar.spec,
    })
}

/// Entries `batch.<i>`.
pub fn save_calibration(dir: &Path, calib: &CalibrationSet) -> Result<()> {
    let mut w = ArchiveWriter::new();
    for (i, b) in calib.batches().iter().enumerate() {
        w.add_f64(&format!("batch.{i}"), b)?;
    }
    w.write(dir)
}

pub fn load_calibration(dir: &Path) -> Result<CalibrationSet> {
    let ar = Archive::open(dir)?;
    let mut batches = Vec::new();
    while ar.contains(&format!("batch.{}", batches.len())) {
        batches.push(ar.matrix(&format!("batch.{}", batches.len()))?);
    }
    CalibrationSet::new(batches, CalibrationSource::Archive(dir.to_path_buf()))
}
