//! `SFDS` binary dataset files and their JSON manifests.
//!
//! Layout (little-endian): magic `SFDS`, `u32` version, `u32` count,
//! `u16` height, `u16` width, `u16` channels, then per record `u16`
//! shape class, `u16` texture class, `h*w*c` pixel bytes
//! (`round(255 * v)`) and `h*w` mask bytes (0 or 255).

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::synth::{Mask, SplitMode, SynthSample, NUM_SHAPES};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"SFDS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 2 * 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairBlock {
    pub kind: String,
    /// Number of pairs; the block spans `2 * pairs` records.
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub count: usize,
    /// Records per shape class.
    pub class_counts: Vec<usize>,
    pub mode: SplitMode,
    pub seed: u64,
    pub format_version: u32,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_blocks: Option<Vec<PairBlock>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (255.0 * v).round() as u8
}

pub fn encode(samples: &[SynthSample]) -> Result<Vec<u8>> {
    let first = samples.first().ok_or(Error::EmptySplit)?;
    let (h, w, c) = (first.image.height(), first.image.width(), first.image.channels());
    let mut out = Vec::with_capacity(HEADER_LEN + samples.len() * (4 + h * w * (c + 1)));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for d in [h, w, c] {
        out.extend_from_slice(&(d as u16).to_le_bytes());
    }
    for s in samples {
        if !s.image.same_dims(&first.image) || s.mask.0.len() != h * w {
            return Err(Error::ShapeMismatch("records differ in dimensions".into()));
        }
        out.extend_from_slice(&(s.shape_class as u16).to_le_bytes());
        out.extend_from_slice(&(s.texture_class as u16).to_le_bytes());
        out.extend(s.image.data().iter().map(|&v| quantize(v)));
        out.extend(s.mask.0.iter().map(|&m| if m { 255u8 } else { 0 }));
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<SynthSample>> {
    let malformed = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(malformed("missing SFDS header".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap()) as usize;
    let version = u32_at(4);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            header: format!("version {version}"),
            payload: format!("reader version {FORMAT_VERSION}"),
        });
    }
    let count = u32_at(8) as usize;
    let (h, w, c) = (u16_at(12), u16_at(14), u16_at(16));
    let record = 4 + h * w * c + h * w;
    if bytes.len() != HEADER_LEN + count * record {
        return Err(malformed(format!(
            "{count} records of {record} bytes need {} bytes, file has {}",
            HEADER_LEN + count * record,
            bytes.len()
        )));
    }
    bytes[HEADER_LEN..]
        .chunks_exact(record)
        .map(|r| {
            let shape_class = u16::from_le_bytes([r[0], r[1]]) as usize;
            let texture_class = u16::from_le_bytes([r[2], r[3]]) as usize;
            let pixels = r[4..4 + h * w * c].iter().map(|&b| b as f32 / 255.0).collect();
            let mask = r[4 + h * w * c..].iter().map(|&b| b != 0).collect();
            Ok(SynthSample {
                image: Image::new(h, w, c, pixels)?,
                shape_class,
                texture_class,
                mask: Mask(mask),
            })
        })
        .collect()
}

pub fn manifest_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("manifest.json")
}

pub fn class_counts(samples: &[SynthSample]) -> Vec<usize> {
    let mut counts = vec![0; NUM_SHAPES];
    for s in samples {
        if s.shape_class >= counts.len() {
            counts.resize(s.shape_class + 1, 0);
        }
        counts[s.shape_class] += 1;
    }
    counts
}

/// Writes the binary file and its sidecar manifest; returns the manifest.
pub fn write_split(
    path: &Path,
    split: &str,
    mode: SplitMode,
    seed: u64,
    samples: &[SynthSample],
    pair_blocks: Option<Vec<PairBlock>>,
) -> Result<DatasetManifest> {
    let bytes = encode(samples)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, &bytes)?;
    let manifest = DatasetManifest {
        split: split.to_string(),
        count: samples.len(),
        class_counts: class_counts(samples),
        mode,
        seed,
        format_version: FORMAT_VERSION,
        sha256: sha256_hex(&bytes),
        pair_blocks,
    };
    fs::write(manifest_path(path), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a split, checking it against its manifest's hash and count.
pub fn read_split(path: &Path) -> Result<(DatasetManifest, Vec<SynthSample>)> {
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(manifest_path(path))?)?;
    let bytes = fs::read(path)?;
    if sha256_hex(&bytes) != manifest.sha256 {
        return Err(Error::ChecksumMismatch {
            path: path.to_path_buf(),
        });
    }
    let samples = decode(&bytes, path)?;
    if samples.len() != manifest.count {
        return Err(Error::VersionMismatch {
            header: format!("manifest count {}", manifest.count),
            payload: format!("{} records", samples.len()),
        });
    }
    Ok((manifest, samples))
}
