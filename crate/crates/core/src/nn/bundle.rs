//! Versioned binary container for trained models.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header
//! (model config, tensor lengths, caller metadata), every parameter and
//! buffer as little-endian `f64`, then a SHA-256 digest of all preceding
//! bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GWMODEL\0";
pub const BUNDLE_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    params: Vec<usize>,
    buffers: Vec<usize>,
    metadata: serde_json::Value,
}

pub fn to_bytes(model: &Model, metadata: &serde_json::Value) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        params: model.params().iter().map(|p| p.len()).collect(),
        buffers: model.buffers().iter().map(|p| p.len()).collect(),
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params().into_iter().chain(model.buffers()) {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn truncated() -> Error {
    Error::Integrity("model bundle is truncated".into())
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, serde_json::Value)> {
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
        return Err(truncated());
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Integrity("not a model bundle".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != BUNDLE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: BUNDLE_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("model bundle checksum mismatch".into()));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let json = body.get(20..20 + header_len).ok_or_else(truncated)?;
    let header: Header = serde_json::from_slice(json)?;
    let mut model = Model::new(header.config)?;
    let mut cursor = 20 + header_len;
    let mut fill = |dst: &mut Vec<f64>, len: usize| -> Result<()> {
        if dst.len() != len {
            return Err(Error::Integrity("tensor sizes disagree with the model config".into()));
        }
        for v in dst.iter_mut() {
            let raw = body.get(cursor..cursor + 8).ok_or_else(truncated)?;
            *v = f64::from_le_bytes(raw.try_into().expect("8 bytes"));
            cursor += 8;
        }
        Ok(())
    };
    let params = model.params_mut();
    if params.len() != header.params.len() {
        return Err(Error::Integrity("parameter count disagrees with the model config".into()));
    }
    for (dst, &len) in params.into_iter().zip(&header.params) {
        fill(dst, len)?;
    }
    let buffers = model.buffers_mut();
    if buffers.len() != header.buffers.len() {
        return Err(Error::Integrity("buffer count disagrees with the model config".into()));
    }
    for (dst, &len) in buffers.into_iter().zip(&header.buffers) {
        fill(dst, len)?;
    }
    if cursor != body.len() {
        return Err(Error::Integrity("trailing bytes after tensor data".into()));
    }
    Ok((model, header.metadata))
}

pub fn save_model(path: &Path, model: &Model, metadata: &serde_json::Value) -> Result<()> {
    std::fs::write(path, to_bytes(model, metadata)?).map_err(|e| Error::file(path, e))
}

pub fn load_model(path: &Path) -> Result<(Model, serde_json::Value)> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::file(path, e))?)
}
