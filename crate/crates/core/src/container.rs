//! Binary tensor container used for spectrograms and checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "CFTENSOR"
//! version  u32       container version (currently 1)
//! hlen     u32       byte length of the JSON header
//! header   hlen      UTF-8 JSON: {"kind", "meta", "tensors": [{"name", "shape": [rows, cols]}]}
//! body     ...       each tensor in header order, row-major f64
//! ```
//!
//! Values are stored as raw `f64` bits so a write/read cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CFTENSOR";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Mat)>,
}

impl TensorFile {
    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, m)| TensorEntry {
                    name: name.clone(),
                    shape: [m.nrows(), m.ncols()],
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let body_len: usize = self.tensors.iter().map(|(_, m)| m.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + body_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &self.tensors {
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic or truncated preamble"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CONTAINER_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CONTAINER_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body_start = 16 + hlen;
        if bytes.len() < body_start {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[16..body_start])
            .map_err(|e| corrupt(&format!("bad header: {e}")))?;

        let mut offset = body_start;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let [rows, cols] = entry.shape;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| corrupt("tensor shape overflow"))?;
            let end = offset + n * 8;
            if bytes.len() < end {
                return Err(corrupt(&format!("truncated tensor `{}`", entry.name)));
            }
            let data: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let m = Mat::from_shape_vec((rows, cols), data).expect("shape checked");
            tensors.push((entry.name, m));
            offset = end;
        }
        if offset != bytes.len() {
            return Err(corrupt("trailing bytes after last tensor"));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, path)
    }
}
