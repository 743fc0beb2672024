//! Tensor archive: `b"CMLT"`, a little-endian `u64` header length, a JSON
//! header, then every tensor's `f64` values little-endian in header order.
//!
//! ```text
//! {"version":1,"tensors":[{"name":"w","dtype":"f64","shape":[2,3]}],"metadata":{...}}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CMLT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    tensors: Vec<Entry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub fn encode(tensors: &[(&str, &Tensor)], metadata: serde_json::Value) -> Vec<u8> {
    let header = Header {
        version: VERSION,
        tensors: tensors
            .iter()
            .map(|(name, t)| Entry { name: name.to_string(), dtype: "f64".into(), shape: t.shape().to_vec() })
            .collect(),
        metadata,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let payload: usize = tensors.iter().map(|(_, t)| t.len() * 8).sum();
    let mut out = Vec::with_capacity(12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], origin: &str) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let corrupt = |message: &str| Error::Corrupt { file: origin.to_string(), message: message.to_string() };
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(corrupt("missing CMLT magic"));
    }
    let hlen = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| corrupt("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.version != VERSION {
        return Err(corrupt(&format!("unsupported version {}", header.version)));
    }
    let mut offset = 12 + hlen;
    let mut out = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        if e.dtype != "f64" {
            return Err(corrupt(&format!("unsupported dtype {}", e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let raw = bytes
            .get(offset..offset + n * 8)
            .ok_or_else(|| corrupt(&format!("truncated data for {}", e.name)))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        offset += n * 8;
        out.push((e.name, Tensor::new(e.shape, data)?));
    }
    if offset != bytes.len() {
        return Err(corrupt("trailing bytes after last tensor"));
    }
    Ok((out, header.metadata))
}

pub fn write_archive(path: &Path, tensors: &[(&str, &Tensor)], metadata: serde_json::Value) -> Result<()> {
    fs::write(path, encode(tensors, metadata)).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_archive(path, &[("tensor", t)], serde_json::Value::Null)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let (mut ts, _) = read_archive(path)?;
    if ts.len() != 1 {
        return Err(Error::Corrupt {
            file: path.display().to_string(),
            message: format!("expected one tensor, found {}", ts.len()),
        });
    }
    Ok(ts.pop().unwrap().1)
}
