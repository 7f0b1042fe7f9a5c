//! Weights file: one line of JSON header, then raw little-endian f32 payloads
//! in header order. Header offsets are relative to the first payload byte.
//! Quantized projections are written in dequantized form; requantizing at
//! the same width reproduces the original codes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

use super::{tensor_layout, Model, ModelConfig};

const FORMAT_TAG: &str = "complab-weights";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    head_mask: Vec<Vec<bool>>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

pub fn write_model<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (name, shape) in tensor_layout(&model.config) {
        let n: usize = shape.iter().product();
        entries.push(TensorEntry { name, shape, offset });
        offset += 4 * n as u64;
    }
    let header = Header {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        config: model.config,
        head_mask: model.head_mask.clone(),
        tensors: entries,
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for t in model.to_tensors() {
        for v in t {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    read_model(&fs::read(path)?)
}

pub fn read_model(bytes: &[u8]) -> Result<Model> {
    if bytes.is_empty() {
        return Err(LabError::format(0, "empty file"));
    }
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| LabError::format(bytes.len() as u64, "header is not terminated by a newline"))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| LabError::format(e.column().saturating_sub(1) as u64, format!("bad header: {e}")))?;
    if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
        return Err(LabError::format(
            0,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let cfg = header.config;
    cfg.validate()
        .map_err(|e| LabError::format(0, format!("invalid config: {e}")))?;
    if header.head_mask.len() != cfg.n_layers || header.head_mask.iter().any(|h| h.len() != cfg.n_heads) {
        return Err(LabError::format(0, "head mask does not match the layer/head layout"));
    }

    let payload_start = newline as u64 + 1;
    let expected = tensor_layout(&cfg);
    if header.tensors.len() != expected.len() {
        return Err(LabError::format(
            payload_start,
            format!("expected {} tensors, header lists {}", expected.len(), header.tensors.len()),
        ));
    }
    let mut offset = 0u64;
    for (entry, (name, shape)) in header.tensors.iter().zip(&expected) {
        if &entry.name != name || &entry.shape != shape {
            return Err(LabError::format(
                payload_start + entry.offset,
                format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    entry.name, entry.shape
                ),
            ));
        }
        if entry.offset != offset {
            return Err(LabError::format(
                payload_start + entry.offset,
                format!("tensor {name} declared at offset {} but expected {offset}", entry.offset),
            ));
        }
        offset += 4 * shape.iter().product::<usize>() as u64;
    }
    let payload = &bytes[newline + 1..];
    if (payload.len() as u64) < offset {
        return Err(LabError::format(
            bytes.len() as u64,
            format!("truncated payload: {} of {offset} bytes", payload.len()),
        ));
    }
    if payload.len() as u64 > offset {
        return Err(LabError::format(payload_start + offset, "trailing bytes after the last tensor"));
    }

    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let tensors = expected
        .iter()
        .map(|(_, shape)| values.by_ref().take(shape.iter().product()).collect())
        .collect();
    Model::from_tensors(cfg, header.head_mask, tensors)
}
