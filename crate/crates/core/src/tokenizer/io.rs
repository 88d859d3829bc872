//! Model container: magic, format version, header length, JSON header,
//! little-endian f64 tensors in header order, CRC32 of all preceding bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LatoError, Result};
use crate::kinematics::template::{asset_hashes, ASSET_SCHEMA_VERSION};
use crate::landmarks::Canvas;

use super::model::{TokenizerConfig, TokenizerModel};

pub const MAGIC: &[u8; 8] = b"LATOTOK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub config: TokenizerConfig,
    pub canvas: [u32; 2],
    pub schema_version: u32,
    pub asset_hashes: BTreeMap<String, String>,
    pub tensors: Vec<TensorInfo>,
}

impl TokenizerModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let header = ModelHeader {
            config: self.config.clone(),
            canvas: [self.canvas.width, self.canvas.height],
            schema_version: ASSET_SCHEMA_VERSION,
            asset_hashes: asset_hashes(),
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| TensorInfo {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &tensors {
            for v in *data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: String| LatoError::Format(m);
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(fail("not a tokenizer model file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(fail("checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(fail(format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
        let json = body
            .get(16..16 + hlen)
            .ok_or_else(|| fail("truncated header".into()))?;
        let header: ModelHeader = serde_json::from_slice(json)?;
        if header.schema_version != ASSET_SCHEMA_VERSION {
            return Err(fail(format!(
                "model built against asset schema {}, this build has {ASSET_SCHEMA_VERSION}",
                header.schema_version
            )));
        }
        let mut model = TokenizerModel::init(
            &header.config,
            Canvas::new(header.canvas[0], header.canvas[1]),
        )?;
        let expected: Vec<TensorInfo> = model
            .tensors()
            .into_iter()
            .map(|(name, shape, _)| TensorInfo { name, shape })
            .collect();
        if expected != header.tensors {
            return Err(fail("tensor layout does not match the configuration".into()));
        }
        let mut data = &body[16 + hlen..];
        for t in model.tensors_mut() {
            let need = 8 * t.len();
            if data.len() < need {
                return Err(fail("truncated tensor data".into()));
            }
            for (v, chunk) in t.iter_mut().zip(data[..need].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            data = &data[need..];
        }
        if !data.is_empty() {
            return Err(fail(format!("{} trailing bytes", data.len())));
        }
        if model.codebook.iter().any(|v| !v.is_finite()) {
            return Err(fail("codebook contains non-finite values".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| LatoError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| LatoError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
