//! Binary checkpoints.
//!
//! Layout: magic `STCK`, `u32` format version, `u64` header length, a JSON
//! header (model config, its hash, optimiser step, parameter names and shapes,
//! caller metadata), then every parameter as little-endian `f32` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 16;
const MAX_HEADER: u64 = 64 << 20;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    config_hash: String,
    step: u64,
    params: Vec<ParamEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// Write `model` with arbitrary JSON `metadata` (class names, training settings).
pub fn save_checkpoint(path: &Path, model: &Model<f32>, metadata: &serde_json::Value) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        config_hash: model.config().config_hash(),
        step: model.params().step(),
        params: model
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json("checkpoint header", e))?;
    let mut buf = Vec::with_capacity(PREFIX_LEN + json.len() + 4 * model.params().count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.params().iter() {
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn corrupt(reason: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(reason.into())
}

/// Read a checkpoint and rebuild the model it describes.
pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < PREFIX_LEN {
        return Err(corrupt("truncated prefix"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if hlen > MAX_HEADER || (bytes.len() - PREFIX_LEN) < hlen as usize {
        return Err(corrupt("truncated header"));
    }
    let hend = PREFIX_LEN + hlen as usize;
    let header: Header =
        serde_json::from_slice(&bytes[PREFIX_LEN..hend]).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.config.config_hash() != header.config_hash {
        return Err(corrupt("config hash does not match config"));
    }
    let mut model = Model::<f32>::build(&header.config, 0).map_err(|e| corrupt(format!("config: {e}")))?;
    if model.params().len() != header.params.len() {
        return Err(corrupt("parameter list does not match architecture"));
    }
    let mut offset = hend;
    for entry in &header.params {
        let p = model
            .params_mut()
            .by_name_mut(&entry.name)
            .ok_or_else(|| corrupt(format!("unknown parameter {}", entry.name)))?;
        if p.shape != entry.shape {
            return Err(corrupt(format!("shape of {} is {:?}, expected {:?}", entry.name, entry.shape, p.shape)));
        }
        let n = p.len();
        let end = offset + 4 * n;
        if end > bytes.len() {
            return Err(corrupt(format!("truncated data in {}", entry.name)));
        }
        for (dst, chunk) in p.value.data_mut().iter_mut().zip(bytes[offset..end].chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        offset = end;
    }
    if offset != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - offset)));
    }
    model.params_mut().set_step(header.step);
    Ok((model, header.metadata))
}

/// Like [`load_checkpoint`], but fails unless the stored configuration equals `expected`.
pub fn load_checkpoint_as(path: &Path, expected: &ModelConfig) -> Result<(Model<f32>, serde_json::Value)> {
    let (model, meta) = load_checkpoint(path)?;
    if model.config() != expected {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint holds {} ({}x{} -> {}), expected {} ({}x{} -> {})",
            model.config().arch.name(),
            model.config().d_in_a,
            model.config().d_in_b,
            model.config().n_classes,
            expected.arch.name(),
            expected.d_in_a,
            expected.d_in_b,
            expected.n_classes
        )));
    }
    Ok((model, meta))
}
