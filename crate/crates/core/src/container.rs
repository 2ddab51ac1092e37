//! Named-tensor container files.
//!
//! Layout:
//!
//! ```text
//! [8 bytes]  magic  b"HILOTNS1"
//! [4 bytes]  header length H, u32 little-endian
//! [H bytes]  UTF-8 JSON header
//! [...]      payload: concatenated little-endian f32 values
//! ```
//!
//! The header is `{"tensors": [{"name", "dtype", "shape", "offset", "length"}, ...]}`
//! with `offset` and `length` in bytes relative to the payload start.
//! Entries are stored back to back in header order and `dtype` is always
//! `"f32"`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HILOTNS1";
const DTYPE_F32: &str = "f32";

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }

    fn byte_len(&self) -> usize {
        self.data.len() * 4
    }
}

/// Ordered collection of uniquely named f32 tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensorContainer {
    entries: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<HeaderEntry>,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

impl NamedTensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: TensorEntry) -> Result<()> {
        if self.get(&entry.name).is_some() {
            return Err(Error::Format(format!("duplicate tensor name {}", entry.name)));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        self.insert(TensorEntry::new(name, shape, data)?)
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Looks up `name`, failing with [`Error::Missing`] when absent.
    pub fn require(&self, name: &str) -> Result<&TensorEntry> {
        self.get(name).ok_or_else(|| Error::Missing(format!("tensor {name}")))
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .entries
            .iter()
            .map(|e| {
                let h = HeaderEntry {
                    name: e.name.clone(),
                    dtype: DTYPE_F32.to_string(),
                    shape: e.shape.clone(),
                    offset,
                    length: e.byte_len(),
                };
                offset += e.byte_len();
                h
            })
            .collect();
        let header = serde_json::to_vec(&Header { tensors })
            .map_err(|e| Error::Format(format!("header encode: {e}")))?;
        let header_len = u32::try_from(header.len())
            .map_err(|_| Error::Format("header exceeds 4 GiB".into()))?;

        let mut out = Vec::with_capacity(12 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing container magic".into()));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Format("header length exceeds file size".into()))?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|e| Error::Format(format!("header decode: {e}")))?;
        let payload = &bytes[header_end..];

        let mut expected_offset = 0usize;
        let mut container = Self::new();
        for h in header.tensors {
            if h.dtype != DTYPE_F32 {
                return Err(Error::Format(format!("tensor {}: unsupported dtype {}", h.name, h.dtype)));
            }
            let count = h
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor {}: shape overflows", h.name)))?;
            if h.length != count * 4 {
                return Err(Error::Format(format!(
                    "tensor {}: length {} does not match shape {:?}",
                    h.name, h.length, h.shape
                )));
            }
            if h.offset != expected_offset {
                return Err(Error::Format(format!(
                    "tensor {}: offset {} is not contiguous (expected {expected_offset})",
                    h.name, h.offset
                )));
            }
            let end = h.offset + h.length;
            if end > payload.len() {
                return Err(Error::PayloadLength { expected: end, found: payload.len() });
            }
            let data = payload[h.offset..end]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            container.insert(TensorEntry { name: h.name, shape: h.shape, data })?;
            expected_offset = end;
        }
        if expected_offset != payload.len() {
            return Err(Error::PayloadLength { expected: expected_offset, found: payload.len() });
        }
        Ok(container)
    }
}

pub fn save_container(path: impl AsRef<Path>, container: &NamedTensorContainer) -> Result<()> {
    fs::write(path, container.to_bytes()?)?;
    Ok(())
}

pub fn load_container(path: impl AsRef<Path>) -> Result<NamedTensorContainer> {
    NamedTensorContainer::from_bytes(&fs::read(path)?)
}
