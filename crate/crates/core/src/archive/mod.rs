//! On-disk tensor archive: a directory with `manifest.json` and one
//! little-endian `tensors.bin` blob whose entries start at 64-byte offsets.

mod artifacts;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use artifacts::{
    load_calibration, load_model, load_rotations, read_quantized, save_calibration, save_model, save_rotations,
    write_quantized, ModelSidecar, MODEL_SIDECAR,
};

pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "tensors.bin";
pub const ALIGNMENT: usize = 64;
pub const FORMAT: &str = "rotq-tensors";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    U8,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: [usize; 2],
    pub offset: usize,
    pub byte_length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub entries: Vec<Entry>,
}

/// Collects tensors in insertion order and writes them out in one go.
#[derive(Debug, Default)]
pub struct ArchiveWriter {
    entries: Vec<Entry>,
    blob: Vec<u8>,
}

impl ArchiveWriter {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, dtype: DType, shape: [usize; 2], bytes: Vec<u8>) -> Result<()> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::config(format!("duplicate archive entry {name:?}")));
        }
        let pad = (ALIGNMENT - self.blob.len() % ALIGNMENT) % ALIGNMENT;
        self.blob.resize(self.blob.len() + pad, 0);
        self.entries.push(Entry {
            name: name.to_string(),
            dtype,
            shape,
            offset: self.blob.len(),
            byte_length: bytes.len(),
        });
        self.blob.extend(bytes);
        Ok(())
    }

    pub fn add_f64(&mut self, name: &str, m: &Matrix) -> Result<()> {
        let bytes = m.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        self.push(name, DType::F64, [m.rows(), m.cols()], bytes)
    }

    /// Stores `m` rounded to single precision.
    pub fn add_f32(&mut self, name: &str, m: &Matrix) -> Result<()> {
        let bytes = m.as_slice().iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
        self.push(name, DType::F32, [m.rows(), m.cols()], bytes)
    }

    pub fn add_u8(&mut self, name: &str, rows: usize, cols: usize, data: &[u8]) -> Result<()> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!("{} bytes for a {rows}x{cols} tensor", data.len())));
        }
        self.push(name, DType::U8, [rows, cols], data.to_vec())
    }

    /// Writes `manifest.json` and `tensors.bin` into `dir`, creating it.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            entries: self.entries.clone(),
        };
        fs::write(dir.join(BLOB), &self.blob)?;
        fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

/// A fully loaded archive.
#[derive(Debug)]
pub struct Archive {
    dir: PathBuf,
    entries: BTreeMap<String, Entry>,
    blob: Vec<u8>,
}

impl Archive {
    pub fn open(dir: &Path) -> Result<Self> {
        let fail = |msg: String| Error::Format {
            path: dir.to_path_buf(),
            msg,
        };
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(fail(format!(
                "unsupported archive {} v{}",
                manifest.format, manifest.version
            )));
        }
        let blob = fs::read(dir.join(BLOB))?;
        let mut entries = BTreeMap::new();
        for e in manifest.entries {
            let expected = e.shape[0] * e.shape[1] * e.dtype.size();
            if e.offset % ALIGNMENT != 0 || e.byte_length != expected || e.offset + e.byte_length > blob.len() {
                return Err(fail(format!("entry {:?} has an invalid extent", e.name)));
            }
            if entries.insert(e.name.clone(), e).is_some() {
                return Err(fail("duplicate entry names".into()));
            }
        }
        Ok(Archive {
            dir: dir.to_path_buf(),
            entries,
            blob,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries.get(name).ok_or_else(|| Error::Format {
            path: self.dir.clone(),
            msg: format!("missing entry {name:?}"),
        })
    }

    fn bytes(&self, e: &Entry) -> &[u8] {
        &self.blob[e.offset..e.offset + e.byte_length]
    }

    /// Any numeric entry widened to `f64`.
    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let e = self.entry(name)?;
        let b = self.bytes(e);
        let data: Vec<f64> = match e.dtype {
            DType::F64 => b
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            DType::F32 => b
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            DType::U8 => b.iter().map(|&v| v as f64).collect(),
        };
        Matrix::from_vec(e.shape[0], e.shape[1], data)
    }

    /// A `u8` entry as `(rows, cols, data)`.
    pub fn bytes_u8(&self, name: &str) -> Result<(usize, usize, Vec<u8>)> {
        let e = self.entry(name)?;
        if e.dtype != DType::U8 {
            return Err(Error::Format {
                path: self.dir.clone(),
                msg: format!("entry {name:?} is not u8"),
            });
        }
        Ok((e.shape[0], e.shape[1], self.bytes(e).to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_alignment() {
        let dir = tempfile::tempdir().unwrap();
        let a = Matrix::from_rows(&[[1.0, -2.5, 3.0]]);
        let b = Matrix::from_rows(&[[0.1], [0.2]]);
        let mut w = ArchiveWriter::new();
        w.add_f64("a", &a).unwrap();
        w.add_f32("b", &b).unwrap();
        w.add_u8("c", 1, 3, &[0, 7, 255]).unwrap();
        assert!(w.add_f64("a", &a).is_err());
        assert!(w.add_u8("d", 2, 2, &[1]).is_err());
        w.write(dir.path()).unwrap();

        let ar = Archive::open(dir.path()).unwrap();
        assert_eq!(ar.matrix("a").unwrap(), a);
        assert_eq!(ar.matrix("b").unwrap()[(1, 0)], 0.2f32 as f64);
        assert_eq!(ar.bytes_u8("c").unwrap(), (1, 3, vec![0, 7, 255]));
        assert!(ar.bytes_u8("a").is_err());
        assert!(ar.matrix("missing").is_err());
        for name in ["a", "b", "c"] {
            assert_eq!(ar.entry(name).unwrap().offset % ALIGNMENT, 0);
        }
        assert_eq!(ar.names().collect::<Vec<_>>(), vec!["a", "b", "c"]);
    }

    #[test]
    fn corrupt_manifests_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArchiveWriter::new();
        w.add_f64("a", &Matrix::identity(2)).unwrap();
        w.write(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"byte_length\": 32", "\"byte_length\": 40")).unwrap();
        assert!(matches!(Archive::open(dir.path()), Err(Error::Format { .. })));
        fs::write(&path, "{").unwrap();
        assert!(Archive::open(dir.path()).is_err());
        assert!(Archive::open(&dir.path().join("nowhere")).unwrap_err().is_io());
    }
}
