//! Versioned binary checkpoints.
//!
//! Layout: 8 magic bytes, a little-endian u32 format version, a u64 length,
//! a JSON metadata blob (full detector config, tensor directory, trainer
//! state), then the raw little-endian f64 tensors in directory order.
//! Parameter tensors come first, optimizer/extra tensors after.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Detector, DetectorConfig, DetectorError, ParamSet, Result};
use crate::io::{atomic_write_bytes, IoError};
use crate::numerics::NumArray;

const MAGIC: &[u8; 8] = b"ULMDCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    section: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format_version: u32,
    config: DetectorConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// An on-disk model snapshot: config, parameters, and any extra tensors the
/// trainer wants alongside (optimizer moments), plus free-form metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: DetectorConfig,
    pub params: Vec<(String, NumArray)>,
    pub extra: Vec<(String, NumArray)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn from_detector(detector: &Detector) -> Self {
        Self {
            config: detector.config.clone(),
            params: detector.params.iter().map(|(n, v)| (n.to_string(), v.clone())).collect(),
            extra: Vec::new(),
            meta: serde_json::Value::Null,
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut tensors = Vec::new();
    for (name, v) in &ckpt.params {
        tensors.push(TensorEntry { name: name.clone(), shape: v.shape().to_vec(), section: "params".into() });
    }
    for (name, v) in &ckpt.extra {
        tensors.push(TensorEntry { name: name.clone(), shape: v.shape().to_vec(), section: "extra".into() });
    }
    let meta = CheckpointMeta {
        format_version: VERSION,
        config: ckpt.config.clone(),
        tensors,
        meta: ckpt.meta.clone(),
    };
    let meta_bytes = serde_json::to_vec(&meta)
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    let data_len: usize = ckpt.params.iter().chain(&ckpt.extra).map(|(_, v)| v.numel() * 8).sum();
    let mut bytes = Vec::with_capacity(8 + 4 + 8 + meta_bytes.len() + data_len);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&meta_bytes);
    for (_, v) in ckpt.params.iter().chain(&ckpt.extra) {
        for x in v.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    atomic_write_bytes(path, &bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)
        .map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    let fail = |m: String| DetectorError::Contract(format!("checkpoint {}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(fail("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(fail(format!("unsupported format version {version}")));
    }
    let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() < 20 + meta_len {
        return Err(fail("truncated metadata".into()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[20..20 + meta_len])
        .map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    meta.config.validate()?;
    let mut offset = 20 + meta_len;
    let mut params = Vec::new();
    let mut extra = Vec::new();
    for entry in &meta.tensors {
        let numel: usize = entry.shape.iter().product();
        let end = offset + numel * 8;
        if bytes.len() < end {
            return Err(fail(format!("truncated tensor {}", entry.name)));
        }
        let data: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = NumArray::from_vec(entry.shape.clone(), data)
            .map_err(|e| fail(format!("tensor {}: {e}", entry.name)))?;
        match entry.section.as_str() {
            "params" => params.push((entry.name.clone(), arr)),
            "extra" => extra.push((entry.name.clone(), arr)),
            s => return Err(fail(format!("unknown section {s}"))),
        }
        offset = end;
    }
    if offset != bytes.len() {
        return Err(fail("trailing bytes after tensors".into()));
    }
    Ok(Checkpoint { config: meta.config, params, extra, meta: meta.meta })
}

impl Detector {
    /// Rebuilds a detector from a checkpoint, validating that the stored
    /// tensors exactly match the layout the config declares.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let skeleton = Detector::new(ckpt.config.clone(), 0)?;
        if ckpt.params.len() != skeleton.params.len() {
            return Err(DetectorError::Contract(format!(
                "checkpoint has {} parameter tensors, config declares {}",
                ckpt.params.len(),
                skeleton.params.len()
            )));
        }
        let mut params = ParamSet::new();
        for (i, (name, value)) in ckpt.params.iter().enumerate() {
            let expect_name = skeleton.params.name_at(i);
            let expect_shape = skeleton.params.value_at(i).shape();
            if name != expect_name {
                return Err(DetectorError::Contract(format!(
                    "checkpoint tensor {i} is {name}, config declares {expect_name}"
                )));
            }
            if value.shape() != expect_shape {
                return Err(DetectorError::Contract(format!(
                    "tensor {name} has shape {:?}, config declares {:?}",
                    value.shape(),
                    expect_shape
                )));
            }
            params.insert(name, value.clone());
        }
        Ok(Detector { config: ckpt.config.clone(), params })
    }
}
