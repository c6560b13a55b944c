//! Single-file weight container.
//!
//! Layout, little-endian: `b"NCKP"`, `u32` version, `u64` manifest length,
//! the JSON manifest, then the concatenated `f32` tensor payloads. The
//! manifest lists each tensor's byte range within the payload and carries a
//! SHA-256 digest of the whole payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::model::TwoStreamModel;
use crate::params::{LoadReport, NamedTensors, Parameters};
use crate::tensor::Tensor;
use crate::config::RunConfig;
use crate::train::ModelSpec;

pub const NCKP_MAGIC: &[u8; 4] = b"NCKP";
pub const NCKP_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Model,
    Backbone,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset within the payload.
    pub offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: CheckpointKind,
    pub tensors: Vec<TensorEntry>,
    /// The model the weights belong to.
    pub model: ModelSpec,
    /// The run configuration that produced the weights, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    pub created_by: String,
    /// `sha256:` followed by the hex digest of the payload.
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub tensors: NamedTensors<f32>,
}

fn digest_of(blob: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(blob)))
}

impl Checkpoint {
    fn new(kind: CheckpointKind, tensors: NamedTensors<f32>, model: ModelSpec, config: Option<RunConfig>) -> Result<Self> {
        for (name, t) in &tensors {
            if !t.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("checkpoint tensor {name}"),
                });
            }
        }
        let mut entries = Vec::with_capacity(tensors.len());
        let mut offset = 0u64;
        for (name, t) in &tensors {
            let length = 4 * t.len() as u64;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                length,
            });
            offset += length;
        }
        let mut ckpt = Self {
            manifest: Manifest {
                kind,
                tensors: entries,
                model,
                config,
                created_by: format!("ts3dcnn {}", env!("CARGO_PKG_VERSION")),
                digest: String::new(),
            },
            tensors,
        };
        ckpt.manifest.digest = digest_of(&ckpt.blob());
        Ok(ckpt)
    }

    /// Every parameter and running statistic of `model`.
    pub fn from_model(model: &TwoStreamModel<f32>, spec: &ModelSpec, config: Option<&RunConfig>) -> Result<Self> {
        Self::new(CheckpointKind::Model, model.named_tensors(), spec.clone(), config.cloned())
    }

    /// The shared backbone only, for initialising other models.
    pub fn from_backbone(backbone: &Backbone<f32>, spec: &ModelSpec) -> Result<Self> {
        Self::new(CheckpointKind::Backbone, backbone.named_tensors(), spec.clone(), None)
    }

    pub fn digest(&self) -> &str {
        &self.manifest.digest
    }

    fn blob(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        for t in self.tensors.values() {
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        blob
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec_pretty(&self.manifest)?;
        let blob = self.blob();
        let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + blob.len());
        out.extend_from_slice(NCKP_MAGIC);
        out.extend_from_slice(&NCKP_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = |expected: u64| Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        };
        let malformed = |reason: String| Error::MalformedHeader {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 4 || &bytes[..4] != NCKP_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                expected: String::from_utf8_lossy(NCKP_MAGIC).into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(truncated(HEADER_LEN as u64));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != NCKP_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_path_buf(),
                version,
            });
        }
        let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let blob_start = (HEADER_LEN as u64).checked_add(manifest_len).ok_or_else(|| malformed("manifest length overflows".into()))?;
        if (bytes.len() as u64) < blob_start {
            return Err(truncated(blob_start));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..blob_start as usize])
            .map_err(|e| malformed(format!("manifest: {e}")))?;
        let blob = &bytes[blob_start as usize..];

        let mut previous_end = 0u64;
        for e in &manifest.tensors {
            if e.offset < previous_end {
                return Err(Error::OverlappingOffsets {
                    name: e.name.clone(),
                    offset: e.offset,
                    previous_end,
                });
            }
            if e.dtype != "f32" {
                return Err(malformed(format!("tensor {:?} has dtype {:?}; only f32 is supported", e.name, e.dtype)));
            }
            let numel: usize = e.shape.iter().product();
            if e.length != 4 * numel as u64 {
                return Err(malformed(format!(
                    "tensor {:?}: length {} does not match shape {:?}",
                    e.name, e.length, e.shape
                )));
            }
            previous_end = e.offset + e.length;
        }
        if (blob.len() as u64) < previous_end {
            return Err(truncated(blob_start + previous_end));
        }
        if blob.len() as u64 != previous_end {
            return Err(Error::LengthMismatch {
                path: path.to_path_buf(),
                expected: blob_start + previous_end,
                found: bytes.len() as u64,
            });
        }
        let actual = digest_of(blob);
        if actual != manifest.digest {
            return Err(Error::DigestMismatch {
                expected: manifest.digest.clone(),
                actual,
            });
        }

        let mut tensors = NamedTensors::new();
        for e in &manifest.tensors {
            let raw = &blob[e.offset as usize..(e.offset + e.length) as usize];
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            if tensors.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?).is_some() {
                return Err(malformed(format!("tensor {:?} listed twice", e.name)));
            }
        }
        Ok(Self { manifest, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Copies the stored tensors into `module`; see [`Parameters::load_named`].
    pub fn load_into<M: Parameters<f32> + ?Sized>(&self, module: &mut M, strict: bool) -> Result<LoadReport> {
        module.load_named(&self.tensors, strict)
    }

    /// Builds the model described by the manifest and loads the weights into
    /// it. A backbone checkpoint leaves the head freshly initialised.
    pub fn restore_model(&self) -> Result<(TwoStreamModel<f32>, LoadReport)> {
        let dropout = self.manifest.config.as_ref().map_or(0.3, |c| c.train.dropout);
        let mut model = self.manifest.model.build(dropout)?;
        let strict = self.manifest.kind == CheckpointKind::Model;
        let report = self.load_into(&mut model, strict)?;
        Ok((model, report))
    }
}
