//! DPWN: a small self-describing tensor container.
//!
//! ```text
//! 0..4    magic "DPWN"
//! 4..8    version, u32 LE (= 1)
//! 8..16   header length in bytes, u64 LE
//! 16..    UTF-8 JSON header
//! ...     payload: raw little-endian f32 values
//! ```
//!
//! Each header tensor entry carries `offset` (bytes from payload start) and
//! `len` (number of f32 elements, equal to the product of `shape`).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"DPWN";
pub const VERSION: u32 = 1;
const FORMAT: &str = "DPWN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchEntry {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub arch: Vec<ArchEntry>,
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub arch: Vec<ArchEntry>,
    pub input_shape: [usize; 3],
    pub classes: usize,
    pub tensors: Vec<(String, Tensor)>,
    pub meta: Option<Value>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.len() as u64,
            });
            offset += 4 * t.len() as u64;
        }
        let header = Header {
            arch: self.arch.clone(),
            input_shape: self.input_shape,
            classes: self.classes,
            tensors: entries,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |needed: u64| Error::Truncated {
            format: FORMAT,
            needed,
            available: bytes.len() as u64,
        };
        if bytes.len() < 4 {
            return Err(truncated(16));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                format: FORMAT,
                found: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
            });
        }
        if bytes.len() < 16 {
            return Err(truncated(16));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion { format: FORMAT, version });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let header_end = 16u64.checked_add(header_len).ok_or_else(|| truncated(u64::MAX))?;
        if header_end > bytes.len() as u64 {
            return Err(truncated(header_end));
        }
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end as usize]).map_err(|e| Error::Header {
                format: FORMAT,
                msg: e.to_string(),
            })?;

        let payload = &bytes[header_end as usize..];
        let mut used = 0u64;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let expected = entry
                .shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
            if entry.shape.is_empty() || entry.shape.contains(&0) || expected != Some(entry.len) {
                return Err(Error::Header {
                    format: FORMAT,
                    msg: format!("tensor {} has shape {:?} but len {}", entry.name, entry.shape, entry.len),
                });
            }
            if entry.offset % 4 != 0 {
                return Err(Error::Header {
                    format: FORMAT,
                    msg: format!("tensor {} offset {} is not 4-byte aligned", entry.name, entry.offset),
                });
            }
            let end = entry
                .len
                .checked_mul(4)
                .and_then(|b| b.checked_add(entry.offset))
                .ok_or_else(|| truncated(u64::MAX))?;
            if end > payload.len() as u64 {
                return Err(truncated(header_end + end));
            }
            used = used.max(end);
            let data = payload[entry.offset as usize..end as usize]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors.iter().any(|(n, _): &(String, Tensor)| n == &entry.name) {
                return Err(Error::Header {
                    format: FORMAT,
                    msg: format!("duplicate tensor {}", entry.name),
                });
            }
            tensors.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
        }
        if used != payload.len() as u64 {
            return Err(Error::Header {
                format: FORMAT,
                msg: format!("{} payload bytes after the last tensor", payload.len() as u64 - used),
            });
        }
        Ok(Container {
            arch: header.arch,
            input_shape: header.input_shape,
            classes: header.classes,
            tensors,
            meta: header.meta,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        Container {
            arch: vec![ArchEntry {
                name: "fc".into(),
                kind: "linear".into(),
                params: serde_json::from_str(r#"{"in":2,"out":1}"#).unwrap(),
            }],
            input_shape: [1, 1, 2],
            classes: 1,
            tensors: vec![
                ("fc.weight".into(), Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap()),
                ("fc.bias".into(), Tensor::new(vec![1], vec![0.25]).unwrap()),
            ],
            meta: None,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"DPWN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn rejects_bad_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(Error::UnsupportedVersion { version: 2, .. })
        ));
    }

    #[test]
    fn rejects_tensor_beyond_payload() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(
            Container::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn rejects_header_beyond_file() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..16].copy_from_slice(&(1u64 << 40).to_le_bytes());
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Truncated { .. })));
    }
}
