//! Checkpoint container shared by every model.
//!
//! A checkpoint is a directory holding `manifest.json` (format version, model
//! kind, model-specific metadata and an ordered tensor table) and
//! `tensors.bin`, a blob of little-endian IEEE-754 `f32` values in row-major
//! order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Parameterized, Real, Tensor};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: usize,
    /// Byte length in the blob.
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_params<T: Real>(
        kind: &str,
        meta: Value,
        model: &impl Parameterized<T>,
    ) -> Checkpoint {
        Checkpoint {
            kind: kind.to_string(),
            meta,
            tensors: model
                .params()
                .into_iter()
                .map(|(n, t)| (n, t.cast::<f32>()))
                .collect(),
        }
    }

    /// Copies stored tensors into `model`, matching by name and shape.
    pub fn fill_params<T: Real>(&self, model: &mut impl Parameterized<T>) -> Result<()> {
        let mut targets = model.params_mut();
        if targets.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} tensors, checkpoint {}",
                targets.len(),
                self.tensors.len()
            )));
        }
        for ((name, dst), (sname, src)) in targets.iter_mut().zip(&self.tensors) {
            if name != sname || dst.shape() != src.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {sname} {:?} does not fit model slot {name} {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            **dst = src.cast();
        }
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> (Manifest, Vec<u8>) {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let offset = blob.len();
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                length: blob.len() - offset,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        (manifest, blob)
    }

    pub fn decode(manifest: Manifest, blob: &[u8]) -> Result<Checkpoint> {
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                manifest.format_version
            )));
        }
        let mut expected_total = 0usize;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            if e.dtype != "f32" {
                return Err(Error::Checkpoint(format!("{}: dtype {}", e.name, e.dtype)));
            }
            let count: usize = e.shape.iter().product();
            if e.length != count * 4 {
                return Err(Error::Checkpoint(format!(
                    "{}: byte length {} does not match shape {:?}",
                    e.name, e.length, e.shape
                )));
            }
            let end = e
                .offset
                .checked_add(e.length)
                .filter(|&end| end <= blob.len())
                .ok_or_else(|| {
                    Error::Checkpoint(format!("{}: range exceeds blob of {} bytes", e.name, blob.len()))
                })?;
            let data: Vec<f32> = blob[e.offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = Tensor::new(&e.shape, data)
                .map_err(|err| Error::Checkpoint(format!("{}: {err}", e.name)))?;
            tensors.push((e.name.clone(), t));
            expected_total += e.length;
        }
        if expected_total != blob.len() {
            return Err(Error::Checkpoint(format!(
                "blob holds {} bytes, tensor table accounts for {expected_total}",
                blob.len()
            )));
        }
        Ok(Checkpoint {
            kind: manifest.kind,
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (manifest, blob) = self.encode();
        let mpath = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
        let bpath = dir.join(BLOB_FILE);
        fs::write(&bpath, blob).map_err(|e| Error::io(&bpath, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let bpath = dir.join(BLOB_FILE);
        let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        Checkpoint::decode(manifest, &blob)
    }
}
