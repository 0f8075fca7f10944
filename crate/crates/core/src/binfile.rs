//! Container for binary artifacts: an 8-byte little-endian header length, a
//! JSON manifest of that length, then a payload of little-endian `f32`s.

use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BinFileError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed artifact {path}: {message}")]
    Format { path: String, message: String },
}

pub fn write<M: Serialize>(path: &Path, manifest: &M, payload: &[f32]) -> Result<(), BinFileError> {
    let header = serde_json::to_vec(manifest).expect("manifest serializes");
    let mut bytes = Vec::with_capacity(8 + header.len() + payload.len() * 4);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| BinFileError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| BinFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads an artifact; `expected_floats` maps the manifest to the payload
/// length it declares, and any disagreement is a format error.
pub fn read<M: DeserializeOwned>(
    path: &Path,
    expected_floats: impl FnOnce(&M) -> usize,
) -> Result<(M, Vec<f32>), BinFileError> {
    let bytes = fs::read(path).map_err(|source| BinFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let format = |message: String| BinFileError::Format {
        path: path.display().to_string(),
        message,
    };
    if bytes.len() < 8 {
        return Err(format("file shorter than its header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if header_len > body.len() {
        return Err(format(format!("header length {header_len} exceeds file size")));
    }
    let manifest: M = serde_json::from_slice(&body[..header_len]).map_err(|e| format(e.to_string()))?;
    let payload = &body[header_len..];
    let expected = expected_floats(&manifest);
    if payload.len() != expected * 4 {
        return Err(format(format!(
            "payload holds {} bytes, manifest declares {} floats",
            payload.len(),
            expected
        )));
    }
    let floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((manifest, floats))
}
