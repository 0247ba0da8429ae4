//! Binary checkpoint format.
//!
//! ```text
//! magic   8 bytes  "GZAUTHCK"
//! version u32 LE
//! hlen    u32 LE
//! header  hlen bytes of JSON
//! payload params, running_mean, running_var as little-endian scalars
//! ```
//!
//! The header's `model_id` is recomputed on load, so a payload that was
//! altered in any bit is rejected.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::signal::NormStats;

use super::{ModelId, ModelParams, NetError, NetworkConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GZAUTHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint holds {found} parameters, expected {expected}")]
    Scalar { found: String, expected: String },
    #[error("checkpoint content hashes to {actual}, header says {declared}")]
    ModelId { declared: ModelId, actual: ModelId },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    scalar: String,
    config: NetworkConfig,
    norm_stats: NormStats<f64>,
    sample_rate_hz: f64,
    model_id: ModelId,
    n_params: usize,
    n_bn: usize,
}

pub fn to_bytes<T: Scalar>(model: &ModelParams<T>) -> Vec<u8> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        scalar: T::NAME.to_string(),
        config: model.config().clone(),
        norm_stats: model.norm_stats().cast(),
        sample_rate_hz: model.sample_rate_hz(),
        model_id: model.model_id(),
        n_params: model.n_params(),
        n_bn: model.running_mean().len(),
    };
    let hjson = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + hjson.len() + (header.n_params + 2 * header.n_bn) * T::BYTES);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(hjson.len() as u32).to_le_bytes());
    out.extend_from_slice(&hjson);
    for v in model.params().iter().chain(model.running_mean()).chain(model.running_var()) {
        v.write_le(&mut out);
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, CheckpointError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| CheckpointError::Format("truncated preamble".into()))
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>, CheckpointError> {
    if bytes.get(..8) != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = read_u32(bytes, 8)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = read_u32(bytes, 12)? as usize;
    let hbytes = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| CheckpointError::Format("truncated header".into()))?;
    let header: Header = serde_json::from_slice(hbytes).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if header.format_version != version {
        return Err(CheckpointError::Format("header version disagrees with preamble".into()));
    }
    if header.scalar != T::NAME {
        return Err(CheckpointError::Scalar {
            found: header.scalar,
            expected: T::NAME.to_string(),
        });
    }
    let payload = &bytes[16 + hlen..];
    let want = (header.n_params + 2 * header.n_bn) * T::BYTES;
    if payload.len() != want {
        return Err(CheckpointError::Format(format!(
            "payload is {} bytes, expected {want}",
            payload.len()
        )));
    }
    let mut vals = payload.chunks_exact(T::BYTES).map(T::read_le);
    let params: Vec<T> = vals.by_ref().take(header.n_params).collect();
    let running_mean: Vec<T> = vals.by_ref().take(header.n_bn).collect();
    let running_var: Vec<T> = vals.collect();
    let model = ModelParams::from_parts(
        header.config,
        params,
        running_mean,
        running_var,
        header.norm_stats.cast(),
        header.sample_rate_hz,
    )?;
    let actual = model.model_id();
    if actual != header.model_id {
        return Err(CheckpointError::ModelId {
            declared: header.model_id,
            actual,
        });
    }
    Ok(model)
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn write_checkpoint<T: Scalar>(model: &ModelParams<T>, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&to_bytes(model)).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}
