//! Checkpoint files: one line of JSON header, the parameters as
//! little-endian `f32`, then the raw 32-byte SHA-256 of everything before it.

use super::model::{ModelParams, ARCHITECTURE, LAYERS, PARAM_COUNT};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub architecture: String,
    pub param_count: usize,
    pub layers: Vec<LayerEntry>,
}

impl CheckpointHeader {
    pub fn current() -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            architecture: ARCHITECTURE.to_string(),
            param_count: PARAM_COUNT,
            layers: LAYERS
                .iter()
                .map(|l| LayerEntry {
                    name: l.name.to_string(),
                    offset: l.offset,
                    len: l.len,
                })
                .collect(),
        }
    }
}

/// Serializes with an explicit header; exposed so malformed files can be
/// produced for tests.
pub fn encode_with_header(header: &CheckpointHeader, values: &[f32]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn encode(params: &ModelParams) -> Result<Vec<u8>> {
    encode_with_header(&CheckpointHeader::current(), params.values())
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    let checksum = || Error::ChecksumMismatch {
        path: path.to_path_buf(),
    };
    if bytes.len() < DIGEST_LEN {
        return Err(checksum());
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(checksum());
    }
    let newline = body.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        reason: "missing header terminator".into(),
    })?;
    let header: CheckpointHeader = serde_json::from_slice(&body[..newline])?;
    let payload = &body[newline + 1..];
    if header.format_version != CHECKPOINT_VERSION || header.architecture != ARCHITECTURE {
        return Err(Error::VersionMismatch {
            header: format!("version {} / {}", header.format_version, header.architecture),
            payload: format!("reader version {CHECKPOINT_VERSION} / {ARCHITECTURE}"),
        });
    }
    if payload.len() % 4 != 0 || payload.len() / 4 != header.param_count || header.param_count != PARAM_COUNT {
        return Err(Error::VersionMismatch {
            header: format!("param_count {}", header.param_count),
            payload: format!("{} bytes ({} values)", payload.len(), payload.len() / 4),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelParams::from_vec(values)
}

pub fn checkpoint_save(params: &ModelParams, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(params)?)?;
    Ok(())
}

pub fn checkpoint_load(path: &Path) -> Result<ModelParams> {
    decode(&fs::read(path)?, path)
}
