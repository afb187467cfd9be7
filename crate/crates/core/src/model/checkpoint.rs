//! Binary model checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (model config, tensor names and shapes, free-form metadata), then
//! every tensor's values as little-endian `f64` in header order. Loading a
//! saved model reproduces its parameters bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::io::atomic_write;

const MAGIC: &[u8; 8] = b"AHFUSCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub fn to_bytes(model: &Model, metadata: serde_json::Value) -> Vec<u8> {
    let named = model.params.named();
    let header = Header {
        config: model.config.clone(),
        tensors: named
            .iter()
            .map(|(name, v)| TensorEntry {
                name: name.clone(),
                shape: v.shape().to_vec(),
            })
            .collect(),
        metadata,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, view) in &named {
        // logical (row-major) order regardless of memory layout
        for v in view.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a checkpoint, returning the model and its metadata.
pub fn from_bytes(bytes: &[u8]) -> Result<(Model, serde_json::Value)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..).ok_or_else(|| bad("truncated header"))?;
    if hlen > body.len() {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    header.config.validate()?;
    let mut data = &body[hlen..];
    let mut params = ModelParams::zeros(&header.config);
    {
        let mut named = params.named_mut();
        if named.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, config implies {}",
                header.tensors.len(),
                named.len()
            )));
        }
        for ((name, view), entry) in named.iter_mut().zip(&header.tensors) {
            if *name != entry.name || view.shape() != entry.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} {:?} does not match expected {name:?} {:?}",
                    entry.name,
                    entry.shape,
                    view.shape()
                )));
            }
            let need = view.len() * 8;
            if data.len() < need {
                return Err(bad("truncated tensor data"));
            }
            for (dst, chunk) in view.iter_mut().zip(data[..need].chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            data = &data[need..];
        }
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok((Model::from_parts(header.config, params)?, header.metadata))
}

pub fn save(model: &Model, metadata: serde_json::Value, path: &Path) -> Result<()> {
    atomic_write(path, &to_bytes(model, metadata))
}

pub fn load(path: &Path) -> Result<(Model, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
