//! Versioned, checksummed JSON documents written with write-then-rename.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: format version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: {detail}")]
    CorruptFile { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Serialize)]
#[serde(rename_all = "kebab-case")]
struct EnvelopeOut<'a> {
    format_version: u32,
    kind: &'a str,
    checksum: String,
    payload: &'a RawValue,
}

#[derive(Deserialize)]
#[serde(rename_all = "kebab-case")]
struct EnvelopeIn {
    format_version: u32,
    kind: String,
    checksum: String,
    payload: Box<RawValue>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes `value` into the envelope format.
pub fn to_document<T: Serialize>(kind: &str, version: u32, value: &T) -> Result<String, PersistError> {
    let payload = serde_json::to_string(value)?;
    let raw = RawValue::from_string(payload)?;
    let env = EnvelopeOut {
        format_version: version,
        kind,
        checksum: digest(raw.get().as_bytes()),
        payload: &raw,
    };
    Ok(serde_json::to_string(&env)?)
}

/// Parses an envelope, checking kind, version and checksum.
pub fn from_document<T: DeserializeOwned>(path: &Path, text: &str, kind: &str, version: u32) -> Result<T, PersistError> {
    let corrupt = |detail: String| PersistError::CorruptFile {
        path: path.to_path_buf(),
        detail,
    };
    let env: EnvelopeIn = serde_json::from_str(text).map_err(|e| corrupt(format!("unreadable envelope: {e}")))?;
    if env.kind != kind {
        return Err(corrupt(format!("holds a {}, expected a {kind}", env.kind)));
    }
    if env.format_version != version {
        return Err(PersistError::VersionMismatch {
            path: path.to_path_buf(),
            found: env.format_version,
            expected: version,
        });
    }
    if digest(env.payload.get().as_bytes()) != env.checksum {
        return Err(corrupt("checksum mismatch".into()));
    }
    serde_json::from_str(env.payload.get()).map_err(|e| corrupt(format!("bad payload: {e}")))
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers see either the old file or the complete new one.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PersistError> {
    let io = |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn save<T: Serialize>(path: &Path, kind: &str, version: u32, value: &T) -> Result<(), PersistError> {
    let doc = to_document(kind, version, value)?;
    write_atomic(path, doc.as_bytes())
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str, version: u32) -> Result<T, PersistError> {
    let text = std::fs::read_to_string(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_document(path, &text, kind, version)
}
