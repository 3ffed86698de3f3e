//! PLYM checkpoints: a JSON header followed by named little-endian f64 tensors.
//!
//! ```text
//! "PLYM" | u16 version | u32 json_len | json {config, meta} | u32 n_tensors
//! per tensor: u16 name_len | name | u8 rank | u32 dims[rank] | f64 data[prod(dims)]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelConfig, ModelError, ModelParams};
use crate::embed_store::{Reader, StoreError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PLYM";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a PLYM checkpoint")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checkpoint truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("{count} trailing bytes after the last tensor")]
    TrailingBytes { count: usize },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("tensor {name}: shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("tensor {0} missing from checkpoint")]
    MissingTensor(String),
    #[error("unexpected tensor {0}")]
    UnknownTensor(String),
    #[error("non-finite value in tensor {0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CheckpointError {
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic => "BadMagic",
            CheckpointError::VersionMismatch { .. } => "VersionMismatch",
            CheckpointError::Truncated { .. } => "Truncated",
            CheckpointError::TrailingBytes { .. } => "TrailingBytes",
            CheckpointError::Header(_) => "Header",
            CheckpointError::ShapeMismatch { .. } => "ShapeMismatch",
            CheckpointError::MissingTensor(_) => "MissingTensor",
            CheckpointError::UnknownTensor(_) => "UnknownTensor",
            CheckpointError::NonFinite(_) => "NonFinite",
            CheckpointError::Model(_) => "Config",
            CheckpointError::Io { .. } => "Io",
        }
    }
}

impl From<StoreError> for CheckpointError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Truncated { offset } => CheckpointError::Truncated { offset },
            StoreError::TrailingBytes { offset } => CheckpointError::TrailingBytes { count: offset },
            other => CheckpointError::Header(other.to_string()),
        }
    }
}

/// Training provenance stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub property: String,
    pub epoch: usize,
    pub val_loss: f64,
    pub seed: u64,
    pub fold: Option<usize>,
    /// Training-set statistics of the (possibly log-transformed) target.
    pub target_mean: f64,
    pub target_std: f64,
    pub log_scale: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
}

pub fn encode_checkpoint(params: &ModelParams, meta: &CheckpointMeta) -> Vec<u8> {
    let header = serde_json::to_vec(&Header { config: params.config.clone(), meta: meta.clone() })
        .expect("checkpoint header serializes");
    let mut copy = params.clone();
    let slots = copy.slots_mut();
    let mut out = Vec::with_capacity(header.len() + 16 + slots.iter().map(|s| s.data.len() * 8 + 32).sum::<usize>());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(slots.len() as u32).to_le_bytes());
    for slot in &slots {
        out.extend_from_slice(&(slot.name.len() as u16).to_le_bytes());
        out.extend_from_slice(slot.name.as_bytes());
        out.push(slot.dims.len() as u8);
        for &d in &slot.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for x in slot.data.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader::new(buf);
    let magic = r.take(4).map_err(|_| CheckpointError::BadMagic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let json_len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(json_len)?).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut params = ModelParams::zeros(&header.config)?;
    let n_tensors = r.u32()? as usize;
    {
        let mut slots = params.slots_mut();
        let mut seen = vec![false; slots.len()];
        for _ in 0..n_tensors {
            let name = r.str16()?;
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let idx = slots
                .iter()
                .position(|s| s.name == name)
                .ok_or_else(|| CheckpointError::UnknownTensor(name.clone()))?;
            let slot = &mut slots[idx];
            if slot.dims != dims {
                return Err(CheckpointError::ShapeMismatch { name, expected: slot.dims.clone(), found: dims });
            }
            let bytes = r.take(slot.data.len() * 8)?;
            for (dst, chunk) in slot.data.iter_mut().zip(bytes.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            if slot.data.iter().any(|x| !x.is_finite()) {
                return Err(CheckpointError::NonFinite(name));
            }
            seen[idx] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(CheckpointError::MissingTensor(slots[i].name.to_string()));
        }
    }
    if let Err(StoreError::TrailingBytes { offset }) = r.finish() {
        return Err(CheckpointError::TrailingBytes { count: buf.len() - offset });
    }
    Ok(Checkpoint { params, meta: header.meta })
}

pub fn save_checkpoint(
    params: &ModelParams,
    meta: &CheckpointMeta,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(params, meta))
        .map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    decode_checkpoint(&buf)
}
