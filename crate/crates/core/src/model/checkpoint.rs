//! Binary checkpoint format (version 1).
//!
//! ```text
//! offset  size  content
//! 0       8     magic "KERPLECK"
//! 8       4     format version, u32 little-endian
//! 12      4     header length N, u32 little-endian
//! 16      N     UTF-8 JSON header
//! 16+N    ...   tensor data: f64 little-endian, tensors in header order,
//!               each row-major
//! ```
//!
//! The header is `{"config": {...}, "step": u64, "tensors": [{"name", "shape"}]}`.
//! Tensor order matches [`super::Params::for_each`]; kernel parameters are stored
//! unconstrained as `kernel.head{h}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{KerpleError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KERPLECK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        self.params.for_each(|info, values| {
            tensors.push(TensorEntry {
                name: info.name,
                shape: info.shape,
            });
            for v in values {
                data.extend_from_slice(&v.to_le_bytes());
            }
        });
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("header is always serializable");
        let mut out = Vec::with_capacity(16 + json.len() + data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        out
    }

    /// Decodes a checkpoint. With `expected`, a checkpoint whose config
    /// differs from it is rejected.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let fail = |msg: &str| KerpleError::Format(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(KerpleError::Format(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + header_len).ok_or_else(|| fail("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| KerpleError::Format(e.to_string()))?;
        if let Some(exp) = expected {
            if exp != &header.config {
                return Err(fail("checkpoint config does not match the requested config"));
            }
        }
        header.config.validate()?;

        // Shapes must match what the config implies.
        let mut params = Model::new(header.config.clone())?.params;
        let mut expected_entries = Vec::new();
        params.for_each(|info, _| {
            expected_entries.push(TensorEntry {
                name: info.name,
                shape: info.shape,
            })
        });
        if expected_entries != header.tensors {
            return Err(fail("tensor table does not match the config"));
        }
        let mut data = &bytes[16 + header_len..];
        let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if data.len() != total * 8 {
            return Err(KerpleError::Format(format!(
                "expected {} bytes of tensor data, found {}",
                total * 8,
                data.len()
            )));
        }
        params.for_each_mut(|_, values| {
            for v in values.iter_mut() {
                *v = f64::from_le_bytes(data[..8].try_into().unwrap());
                data = &data[8..];
            }
        });
        Ok(Model::from_parts(header.config, params, header.step))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, expected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Variant;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            layers: 2,
            heads: 2,
            head_dim: 3,
            mlp_hidden: 4,
            variant: Variant::ThreeParaLog,
            seed: 17,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = Model::new(cfg()).unwrap();
        m.set_step(42);
        m.params_mut().embedding[[1, 1]] = f64::MIN_POSITIVE;
        m.params_mut().kernel[1].raw[2] = -1.0 / 3.0;
        let back = Model::from_bytes(&m.to_bytes(), Some(&cfg())).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), m.to_bytes());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::new(cfg()).unwrap();
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path, None).unwrap(), m);
    }

    #[test]
    fn rejects_mismatched_config_and_corruption() {
        let m = Model::new(cfg()).unwrap();
        let bytes = m.to_bytes();
        let other = ModelConfig { heads: 3, ..cfg() };
        assert!(Model::from_bytes(&bytes, Some(&other)).is_err());
        assert!(Model::from_bytes(&bytes[..bytes.len() - 8], None).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad, None).is_err());
        let mut bad = bytes;
        bad[8] = 9;
        assert!(Model::from_bytes(&bad, None).is_err());
    }
}
