//! Model file container: one JSON header line followed by raw little-endian
//! `f32` blocks. The header lists every block with its shape and byte offset
//! (relative to the first byte after the header's newline).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT: &str = "vulnembed-tensors/1";

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("missing header terminator")]
    MissingHeader,
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("expected model kind {expected:?}, found {found:?}")]
    WrongKind { expected: String, found: String },
    #[error("block {0:?} out of bounds or misaligned")]
    BadBlock(String),
    #[error("missing block {0:?}")]
    MissingBlock(String),
    #[error("block {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    kind: String,
    meta: serde_json::Value,
    blocks: Vec<BlockInfo>,
}

/// A decoded model file.
#[derive(Debug, Clone)]
pub struct TensorFile {
    pub kind: String,
    pub meta: serde_json::Value,
    blocks: Vec<(BlockInfo, Vec<f64>)>,
}

impl TensorFile {
    pub fn block(&self, name: &str) -> Result<&[f64], TensorFileError> {
        self.blocks
            .iter()
            .find(|(info, _)| info.name == name)
            .map(|(_, data)| data.as_slice())
            .ok_or_else(|| TensorFileError::MissingBlock(name.to_string()))
    }

    /// Fetches a block and checks its declared shape.
    pub fn block_shaped(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>, TensorFileError> {
        let (info, data) = self
            .blocks
            .iter()
            .find(|(info, _)| info.name == name)
            .ok_or_else(|| TensorFileError::MissingBlock(name.to_string()))?;
        if info.shape != shape {
            return Err(TensorFileError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: info.shape.clone(),
            });
        }
        Ok(data.clone())
    }

    pub fn block_names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|(info, _)| info.name.as_str())
    }
}

/// Encodes blocks as `(name, shape, values)`; values are narrowed to `f32`.
pub fn encode(kind: &str, meta: serde_json::Value, blocks: &[(&str, Vec<usize>, &[f64])]) -> Vec<u8> {
    let mut infos = Vec::with_capacity(blocks.len());
    let mut offset = 0;
    for (name, shape, data) in blocks {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let bytes = data.len() * 4;
        infos.push(BlockInfo {
            name: name.to_string(),
            shape: shape.clone(),
            offset,
            bytes,
        });
        offset += bytes;
    }
    let header = Header {
        format: FORMAT.to_string(),
        kind: kind.to_string(),
        meta,
        blocks: infos,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(offset);
    for (_, _, data) in blocks {
        for &x in data.iter() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], expected_kind: &str) -> Result<TensorFile, TensorFileError> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or(TensorFileError::MissingHeader)?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| TensorFileError::BadHeader(e.to_string()))?;
    if header.format != FORMAT {
        return Err(TensorFileError::BadHeader(format!(
            "unknown format {:?}",
            header.format
        )));
    }
    if header.kind != expected_kind {
        return Err(TensorFileError::WrongKind {
            expected: expected_kind.to_string(),
            found: header.kind,
        });
    }
    let data = &bytes[newline + 1..];
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for info in header.blocks {
        let count: usize = info.shape.iter().product();
        let end = info.offset.checked_add(info.bytes);
        let slice = match end {
            Some(end) if end <= data.len() && info.bytes == count * 4 => &data[info.offset..end],
            _ => return Err(TensorFileError::BadBlock(info.name)),
        };
        let values = slice
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        blocks.push((info, values));
    }
    Ok(TensorFile {
        kind: header.kind,
        meta: header.meta,
        blocks,
    })
}

/// Rounds every value to the nearest `f32`, matching what a save/load cycle yields.
pub fn round_to_f32(values: &mut [f64]) {
    for x in values {
        *x = *x as f32 as f64;
    }
}
