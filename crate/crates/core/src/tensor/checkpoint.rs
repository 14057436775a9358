//! Binary checkpoint container shared by every model.
//!
//! Layout: the 8-byte magic `CKPT0001`, a little-endian `u64` header length
//! `L`, `L` bytes of UTF-8 JSON describing the tensors, then the
//! concatenated little-endian `f32` payloads. Offsets in the header are
//! relative to the start of the payload section.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerParams, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CKPT0001";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    byte_len: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

/// Parameters plus free-form string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: LayerParams,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(tensors: LayerParams) -> Self {
        Self {
            tensors,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks meta `{key}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for (name, t) in self.tensors.iter() {
            let byte_len = 4 * t.len() as u64;
            entries.push(Entry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset,
                byte_len,
            });
            offset += byte_len;
        }
        let header = serde_json::to_vec(&Header {
            tensors: entries,
            meta: self.meta.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.tensors.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |detail: String| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing CKPT0001 magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad(format!("header length {hlen} exceeds file")))?;
        let header: Header = serde_json::from_slice(&bytes[16..payload_start])
            .map_err(|e| bad(format!("header: {e}")))?;
        let payload = &bytes[payload_start..];
        let mut tensors = LayerParams::new();
        for e in header.tensors {
            if e.dtype != "f32" {
                return Err(bad(format!("tensor `{}` has dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            if e.byte_len != 4 * n as u64 {
                return Err(bad(format!(
                    "tensor `{}` byte_len disagrees with shape",
                    e.name
                )));
            }
            let (start, end) = (e.offset as usize, (e.offset + e.byte_len) as usize);
            if end > payload.len() {
                return Err(bad(format!("tensor `{}` runs past end of file", e.name)));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(e.shape, data).map_err(|err| bad(err.to_string()))?;
            tensors
                .insert(e.name, t)
                .map_err(|err| bad(err.to_string()))?;
        }
        Ok(Self {
            tensors,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut p = LayerParams::new();
        p.insert(
            "w",
            Tensor::new(
                vec![2, 3],
                vec![1.0, -0.0, 3.5, f32::MIN_POSITIVE, 5.0, 6.25],
            )
            .unwrap(),
        )
        .unwrap();
        p.insert("b", Tensor::from_vec(vec![0.1, 0.2]).unwrap())
            .unwrap();
        Checkpoint::new(p).with_meta("tau", 0.1)
    }

    #[test]
    fn layout_matches_format() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], b"CKPT0001");
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        let first = &header["tensors"][0];
        assert_eq!(first["name"], "b");
        assert_eq!(first["dtype"], "f32");
        assert_eq!(first["offset"], 0);
        assert_eq!(first["byte_len"], 8);
        assert_eq!(header["tensors"][1]["offset"], 8);
        assert_eq!(bytes.len(), 16 + hlen + 4 * 8);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let ck = sample();
        ck.save(&a).unwrap();
        let loaded = Checkpoint::load(&a).unwrap();
        assert_eq!(loaded, ck);
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn missing_file_is_named() {
        let err = Checkpoint::load(Path::new("/nonexistent/x.ckpt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.ckpt"));
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("t")).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT", Path::new("t")).is_err());
    }
}
