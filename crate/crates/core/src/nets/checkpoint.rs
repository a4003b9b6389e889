//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"MSDACKPT" | u32 version | u32 header_len | header JSON | f32 payload | sha256
//! ```
//!
//! The JSON header carries a `kind` tag, free-form metadata (configurations,
//! domain names) and the tensor table (name + shape) in payload order. The
//! trailing digest covers every preceding byte.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ParameterSet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MSDACKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub params: ParameterSet<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Checkpoint {
            kind: kind.into(),
            meta,
            params: ParameterSet::new(),
        }
    }

    /// Appends every tensor of `set` under `prefix/name`.
    pub fn add_section(&mut self, prefix: &str, set: &ParameterSet<f32>) {
        for (name, t) in set.iter() {
            self.params.push(format!("{prefix}/{name}"), t.clone());
        }
    }

    /// Tensors stored under `prefix/`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> Result<ParameterSet<f32>> {
        let lead = format!("{prefix}/");
        let mut out = ParameterSet::new();
        for (name, t) in self.params.iter() {
            if let Some(rest) = name.strip_prefix(&lead) {
                out.push(rest, t.clone());
            }
        }
        if out.is_empty() {
            return Err(Error::Validation(format!("checkpoint has no section '{prefix}'")));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Validation(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.params.num_params() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.params.iter() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Integrity("missing checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 16 + DIGEST_LEN {
            return Err(Error::Integrity(format!("file truncated at {} bytes", bytes.len())));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("checksum mismatch (truncated or corrupted)".into()));
        }
        let header_len = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
        let header_bytes = body
            .get(16..16 + header_len)
            .ok_or_else(|| Error::Integrity("header extends past end of file".into()))?;
        let header: Header =
            serde_json::from_slice(header_bytes).map_err(|e| Error::Integrity(format!("bad header: {e}")))?;
        let mut payload = &body[16 + header_len..];
        let mut params = ParameterSet::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < 4 * n {
                return Err(Error::Integrity(format!("payload too short for tensor '{}'", entry.name)));
            }
            let (chunk, rest) = payload.split_at(4 * n);
            payload = rest;
            let values: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("size checked");
            params.push(entry.name, t);
        }
        if !payload.is_empty() {
            return Err(Error::Integrity(format!("{} trailing payload bytes", payload.len())));
        }
        Ok(Checkpoint {
            kind: header.kind,
            meta: header.meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint is tagged `kind`.
    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Validation(format!(
                "checkpoint holds '{}', expected '{kind}'",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn meta_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Validation(format!("checkpoint metadata lacks '{key}'")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Validation(format!("checkpoint metadata '{key}': {e}")))
    }
}
