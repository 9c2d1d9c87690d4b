//! Binary checkpoint: `u64` LE header length, a JSON header, then every
//! tensor's entries as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mat, ParamStore};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorHeader {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: serde_json::Value,
    pub tensors: Vec<TensorHeader>,
}

pub fn encode_checkpoint<C: Serialize>(store: &ParamStore, config: &C) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config: serde_json::to_value(config)?,
        tensors: store
            .ids()
            .map(|id| {
                let (rows, cols) = store.values[id].shape();
                TensorHeader {
                    name: store.name(id).to_string(),
                    rows,
                    cols,
                }
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 8 * store.num_scalars());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for m in store.values.iter() {
        for x in m.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<(String, Mat)>)> {
    let short = || Error::Checkpoint("truncated file".into());
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(short)?.try_into().unwrap();
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes.get(8..8 + header_len).ok_or_else(short)?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut offset = 8 + header_len;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n = t.rows * t.cols;
        let raw = bytes.get(offset..offset + 8 * n).ok_or_else(short)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += 8 * n;
        tensors.push((t.name.clone(), Mat::new(t.rows, t.cols, data)?));
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - offset
        )));
    }
    Ok((header, tensors))
}

pub fn write_checkpoint<C: Serialize>(path: &Path, store: &ParamStore, config: &C) -> Result<()> {
    let bytes = encode_checkpoint(store, config)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<(String, Mat)>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut s = ParamStore::new();
        s.add("w", Mat::from_rows(&[&[1.0, -2.5], &[3.0, 1e-300]]).unwrap()).unwrap();
        s.add("b", Mat::col(vec![0.125])).unwrap();
        let bytes = encode_checkpoint(&s, &serde_json::json!({"hidden": 2})).unwrap();
        let (header, tensors) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(header.config["hidden"], 2);
        assert_eq!(tensors[0].0, "w");
        assert_eq!(&tensors[0].1, s.get("w").unwrap());
        assert_eq!(&tensors[1].1, s.get("b").unwrap());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
