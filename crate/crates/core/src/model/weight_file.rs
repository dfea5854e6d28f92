//! `MMELW1` weight files.
//!
//! Layout: the 6 magic bytes `MMELW1`, a little-endian `u64` header length, a
//! UTF-8 JSON header, then a blob of little-endian `f64` values. The header
//! holds the model config, optional enhancer scalars, the blob length in
//! bytes and a tensor directory of `{name, shape, offset}` with byte offsets
//! relative to the blob start. Tensors are laid out contiguously in directory
//! order. JSON keys are sorted.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};

use super::config::ModelConfig;
use super::weights::{tensor_specs, Weights};
use crate::enhancer::{EnhancerParams, EnhancerScalars};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"MMELW1";
const PREAMBLE: usize = MAGIC.len() + 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DirEntry {
    name: String,
    offset: u64,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    blob_len: u64,
    config: ModelConfig,
    enhancer: Option<EnhancerScalars>,
    tensors: Vec<DirEntry>,
}

/// Contents of a weight file: the encoder and, optionally, enhancer parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub weights: Weights,
    pub enhancer: Option<EnhancerParams>,
}

impl WeightFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut named: Vec<(String, Tensor)> = tensor_specs(self.weights.config())
            .into_iter()
            .map(|s| {
                let t = self.weights.param(&s.name).clone();
                (s.name, t)
            })
            .collect();
        if let Some(e) = &self.enhancer {
            named.extend(
                e.named_tensors()
                    .into_iter()
                    .map(|(n, t)| (n.to_string(), t)),
            );
        }
        let mut tensors = Vec::with_capacity(named.len());
        let mut blob = Vec::new();
        for (name, t) in &named {
            tensors.push(DirEntry {
                name: name.clone(),
                offset: blob.len() as u64,
                shape: t.shape().to_vec(),
            });
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            blob_len: blob.len() as u64,
            config: self.weights.config().clone(),
            enhancer: self.enhancer.as_ref().map(EnhancerParams::scalars),
            tensors,
        };
        // Round-trip through Value so object keys come out sorted.
        let value = serde_json::to_value(&header).map_err(|e| Error::Header(e.to_string()))?;
        let json = serde_json::to_vec(&value).map_err(|e| Error::Header(e.to_string()))?;
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() {
            return Err(Error::Truncated("shorter than magic".into()));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < PREAMBLE {
            return Err(Error::Truncated("missing header length".into()));
        }
        let mut len_bytes = [0u8; 8];
        len_bytes.copy_from_slice(&bytes[MAGIC.len()..PREAMBLE]);
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let header_end = PREAMBLE
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Truncated("header extends past end of file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| Error::Header(e.to_string()))?;
        let blob = &bytes[header_end..];
        if (blob.len() as u64) < header.blob_len {
            return Err(Error::Truncated(format!(
                "blob has {} bytes, header declares {}",
                blob.len(),
                header.blob_len
            )));
        }
        if blob.len() as u64 != header.blob_len {
            return Err(Error::Directory(format!(
                "{} trailing bytes after declared blob",
                blob.len() as u64 - header.blob_len
            )));
        }
        let mut expected_offset = 0u64;
        let mut tensors = BTreeMap::new();
        for entry in &header.tensors {
            if entry.offset != expected_offset {
                return Err(Error::Directory(format!(
                    "{} at offset {}, expected {}",
                    entry.name, entry.offset, expected_offset
                )));
            }
            let count: usize = entry.shape.iter().product();
            let nbytes = 8 * count as u64;
            if expected_offset + nbytes > header.blob_len {
                return Err(Error::Directory(format!(
                    "{} with shape {:?} runs past blob end",
                    entry.name, entry.shape
                )));
            }
            let start = expected_offset as usize;
            let data = blob[start..start + 8 * count]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(entry.shape.clone(), data)
                .map_err(|e| Error::Directory(format!("{}: {e}", entry.name)))?;
            if tensors.insert(entry.name.clone(), t).is_some() {
                return Err(Error::Directory(format!("duplicate tensor {}", entry.name)));
            }
            expected_offset += nbytes;
        }
        if expected_offset != header.blob_len {
            return Err(Error::Directory(format!(
                "directory covers {expected_offset} bytes, blob has {}",
                header.blob_len
            )));
        }
        let enhancer_tensors: BTreeMap<String, Tensor> = tensors
            .iter()
            .filter(|(k, _)| k.starts_with("enhancer/"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        tensors.retain(|k, _| !k.starts_with("enhancer/"));
        let weights = Weights::from_tensors(header.config.clone(), tensors)
            .map_err(|e| Error::Directory(e.to_string()))?;
        let enhancer = match header.enhancer {
            Some(scalars) => Some(
                EnhancerParams::from_parts(scalars, enhancer_tensors, &header.config)
                    .map_err(|e| Error::Directory(e.to_string()))?,
            ),
            None if enhancer_tensors.is_empty() => None,
            None => {
                return Err(Error::Directory(
                    "enhancer tensors present without enhancer scalars".into(),
                ))
            }
        };
        Ok(Self { weights, enhancer })
    }
}

pub fn save_weights(file: &WeightFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, file.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightFile::from_bytes(&bytes)
}

/// Git-style blob hash: SHA-1 over `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
