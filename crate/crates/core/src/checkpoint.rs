//! On-disk checkpoints: a JSON manifest plus a raw little-endian `f64` blob.
//!
//! The manifest lists every tensor with its shape, byte offset and element
//! count, in blob order. `meta` carries arbitrary JSON (model config, trainer
//! state).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Module;

pub const FORMAT_VERSION: &str = "swapvae-ckpt-1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub blob: String,
    pub total_bytes: u64,
    pub tensors: Vec<TensorEntry>,
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    /// Appends every tensor of `module` under `prefix`.
    pub fn capture(&mut self, prefix: &str, module: &mut dyn Module) {
        module.visit(prefix, &mut |t| {
            self.tensors.push(Tensor {
                name: t.name,
                shape: t.shape,
                data: t.value.to_vec(),
            })
        });
    }

    /// Copies stored values back into `module`; every tensor the module
    /// exposes under `prefix` must be present with a matching shape.
    pub fn restore(&self, prefix: &str, module: &mut dyn Module) -> Result<()> {
        let mut err = None;
        module.visit(prefix, &mut |t| {
            if err.is_some() {
                return;
            }
            match self.tensors.iter().find(|s| s.name == t.name) {
                None => err = Some(Error::Checkpoint(format!("missing tensor `{}`", t.name))),
                Some(s) if s.shape != t.shape => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor `{}` has shape {:?}, expected {:?}",
                        t.name, s.shape, t.shape
                    )))
                }
                Some(s) => t.value.copy_from_slice(&s.data),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn manifest(&self, blob: &str) -> Manifest {
        let mut offset = 0;
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                    count: t.data.len() as u64,
                };
                offset += 8 * t.data.len() as u64;
                e
            })
            .collect();
        Manifest {
            format: FORMAT_VERSION.into(),
            blob: blob.into(),
            total_bytes: offset,
            tensors,
            meta: self.meta.clone(),
        }
    }

    pub fn blob_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * self.tensors.iter().map(|t| t.data.len()).sum::<usize>());
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Writes `path` (manifest) and `path` with extension `bin` (blob).
    /// Returns the blob path.
    pub fn save(&self, path: &Path) -> Result<PathBuf> {
        let blob_path = path.with_extension("bin");
        let blob_name = blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", path.display())))?
            .to_string();
        let manifest = self.manifest(&blob_name);
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&blob_path, self.blob_bytes()).map_err(|e| Error::io(&blob_path, e))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))?;
        Ok(blob_path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` (expected `{FORMAT_VERSION}`)",
                manifest.format
            )));
        }
        let blob_path = path.with_file_name(&manifest.blob);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Self::from_parts(manifest, &bytes)
    }

    pub fn from_parts(manifest: Manifest, bytes: &[u8]) -> Result<Self> {
        if bytes.len() as u64 != manifest.total_bytes {
            return Err(Error::Checkpoint(format!(
                "blob is {} bytes, manifest declares {}",
                bytes.len(),
                manifest.total_bytes
            )));
        }
        let mut expected_offset = 0;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            if e.offset != expected_offset {
                return Err(Error::Checkpoint(format!("tensor `{}` at offset {}, expected {}", e.name, e.offset, expected_offset)));
            }
            if e.shape.iter().product::<usize>() as u64 != e.count {
                return Err(Error::Checkpoint(format!("tensor `{}` shape {:?} disagrees with count {}", e.name, e.shape, e.count)));
            }
            let end = e.offset + 8 * e.count;
            if end > manifest.total_bytes {
                return Err(Error::Checkpoint(format!("tensor `{}` runs past the blob", e.name)));
            }
            let data = bytes[e.offset as usize..end as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data,
            });
            expected_offset = end;
        }
        if expected_offset != manifest.total_bytes {
            return Err(Error::Checkpoint("manifest does not cover the whole blob".into()));
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }
}
