//! Checkpoint file: a magic line, a length-prefixed TOML header (format
//! version, model config, tensor manifest), then a little-endian `f32` blob.
//!
//! ```text
//! latent-trace-checkpoint 1\n
//! header-bytes <n>\n
//! <n bytes of TOML>
//! <blob>
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::scalar::Scalar;

use super::config::LoopedConfig;
use super::params::{LoopedModelParams, LoopedWeights};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "latent-trace-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    blob_bytes: usize,
    config: LoopedConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    /// Byte offset into the blob.
    offset: usize,
    rows: usize,
    cols: usize,
}

/// Serializes parameters. Values are stored as `f32` whatever `T` is.
pub fn write_checkpoint<T: Scalar>(params: &LoopedModelParams<T>) -> Result<Vec<u8>> {
    let mut blob = Vec::with_capacity(params.param_count() * 4);
    let mut tensors = Vec::new();
    for (name, t) in params.weights.named() {
        tensors.push(TensorEntry {
            name,
            offset: blob.len(),
            rows: t.rows(),
            cols: t.cols(),
        });
        for &v in t.data() {
            blob.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        blob_bytes: blob.len(),
        config: params.config.clone(),
        tensors,
    };
    let text = toml::to_string(&header).map_err(|e| Error::Serde(e.to_string()))?;
    let mut out = format!("{MAGIC} {CHECKPOINT_VERSION}\nheader-bytes {}\n", text.len()).into_bytes();
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&blob);
    Ok(out)
}

fn take_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptCheckpoint("missing header line".into()))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| Error::CorruptCheckpoint("header line is not UTF-8".into()))
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<LoopedModelParams<T>> {
    let mut pos = 0;
    let magic = take_line(bytes, &mut pos)?;
    let version = magic
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::CorruptCheckpoint("bad magic line".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len_line = take_line(bytes, &mut pos)?;
    let header_len: usize = len_line
        .strip_prefix("header-bytes ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::CorruptCheckpoint("bad header length line".into()))?;
    let header_end = pos
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::CorruptCheckpoint("truncated header".into()))?;
    let text = std::str::from_utf8(&bytes[pos..header_end])
        .map_err(|_| Error::CorruptCheckpoint("header is not UTF-8".into()))?;
    let header: Header = toml::from_str(text).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: header.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let blob = &bytes[header_end..];
    if blob.len() != header.blob_bytes {
        return Err(Error::CorruptCheckpoint(format!(
            "blob has {} bytes, manifest declares {}",
            blob.len(),
            header.blob_bytes
        )));
    }
    header.config.validate()?;

    let mut weights = LoopedWeights::<Tensor2<T>>::zeros(&header.config);
    let names: Vec<(String, (usize, usize))> = weights.named().into_iter().map(|(n, t)| (n, t.shape())).collect();
    if names.len() != header.tensors.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "manifest lists {} tensors, config implies {}",
            header.tensors.len(),
            names.len()
        )));
    }
    for ((name, expected), (slot, entry)) in names.iter().zip(weights.slots_mut().into_iter().zip(&header.tensors)) {
        if &entry.name != name {
            return Err(Error::CorruptCheckpoint(format!("expected tensor {name}, found {}", entry.name)));
        }
        if (entry.rows, entry.cols) != *expected {
            return Err(Error::CheckpointShape {
                name: name.clone(),
                expected: *expected,
                found: (entry.rows, entry.cols),
            });
        }
        let n = entry.rows * entry.cols;
        let raw = entry
            .offset
            .checked_add(n * 4)
            .filter(|&e| e <= blob.len())
            .map(|e| &blob[entry.offset..e])
            .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {name} lies outside the blob")))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| T::lit(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        *slot = Tensor2::from_vec(entry.rows, entry.cols, values)?;
    }
    Ok(LoopedModelParams {
        config: header.config,
        weights,
    })
}

pub fn save_checkpoint<T: Scalar>(params: &LoopedModelParams<T>, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<LoopedModelParams<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
