//! Checkpoint container: an 8-byte magic, a little-endian u64 header length,
//! a JSON header (free-form metadata plus a tensor table), then the raw
//! little-endian tensor payloads in table order.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::io::write_bytes_atomic;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TMVCKPT1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Serialize `meta` and `tensors` into container bytes.
pub fn encode_checkpoint(meta: &serde_json::Value, tensors: &BTreeMap<String, Tensor>) -> Result<Vec<u8>> {
    let mut table = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in tensors {
        let dtype = match t.dtype() {
            DType::F32 => {
                for v in t.flatten_all()?.to_vec1::<f32>()? {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                "f32"
            }
            DType::F64 => {
                for v in t.flatten_all()?.to_vec1::<f64>()? {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                "f64"
            }
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?} for `{name}`"))),
        };
        table.push(TensorEntry {
            name: name.clone(),
            dtype: dtype.into(),
            shape: t.dims().to_vec(),
        });
    }
    let header = serde_json::to_vec(&Header {
        meta: meta.clone(),
        tensors: table,
    })
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parse container bytes back into metadata and tensors.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(serde_json::Value, BTreeMap<String, Tensor>)> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut data = &body[hlen..];
    let mut tensors = BTreeMap::new();
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let width = match entry.dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::Checkpoint(format!("unknown dtype `{other}`"))),
        };
        if data.len() < n * width {
            return Err(Error::Checkpoint(format!("truncated tensor `{}`", entry.name)));
        }
        let (chunk, rest) = data.split_at(n * width);
        data = rest;
        let t = if width == 4 {
            let v: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(v, entry.shape.as_slice(), &Device::Cpu)?
        } else {
            let v: Vec<f64> = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Tensor::from_vec(v, entry.shape.as_slice(), &Device::Cpu)?
        };
        if tensors.insert(entry.name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{}`", entry.name)));
        }
    }
    if !data.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok((header.meta, tensors))
}

/// Atomically write a checkpoint; returns its sha256 hex digest.
pub fn save_checkpoint(path: &Path, meta: &serde_json::Value, tensors: &BTreeMap<String, Tensor>) -> Result<String> {
    let bytes = encode_checkpoint(meta, tensors)?;
    write_bytes_atomic(path, &bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_checkpoint(path: &Path) -> Result<(serde_json::Value, BTreeMap<String, Tensor>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// sha256 hex digest of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_values_and_meta() {
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), Tensor::new(&[[1.5f32, -2.0], [3.0, 4.25]], &Device::Cpu).unwrap());
        t.insert("b".to_string(), Tensor::new(&[0.1f64, 1e-300], &Device::Cpu).unwrap());
        let meta = serde_json::json!({"epoch": 3, "name": "x"});
        let bytes = encode_checkpoint(&meta, &t).unwrap();
        let (m, back) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(m, meta);
        assert_eq!(back["a"].to_vec2::<f32>().unwrap(), t["a"].to_vec2::<f32>().unwrap());
        assert_eq!(back["b"].to_vec1::<f64>().unwrap(), vec![0.1, 1e-300]);
    }

    #[test]
    fn corrupt_bytes_rejected() {
        assert!(decode_checkpoint(b"garbage").is_err());
        let mut t = BTreeMap::new();
        t.insert("a".to_string(), Tensor::new(&[1.0f32, 2.0], &Device::Cpu).unwrap());
        let bytes = encode_checkpoint(&serde_json::Value::Null, &t).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
