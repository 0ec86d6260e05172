//! Graph files and audit replay.

mod canonical;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::{read_records, replay_records, ReplayError};
use crate::config::{ConfigError, EngineConfig};
use crate::graph::{CanvasGraph, ValidationReport};

pub use canonical::{canonical_value, format_float, to_canonical};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed graph file: {0}")]
    Malformed(String),
    #[error("unknown format_version {0}")]
    UnknownFormatVersion(u64),
    #[error("checksum mismatch: file says {stored}, content hashes to {computed}")]
    ChecksumMismatch { stored: String, computed: String },
    #[error("graph fails validation: {} issue(s)", .0.issues.len())]
    ValidationFailed(ValidationReport),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl From<serde_json::Error> for IoError {
    fn from(e: serde_json::Error) -> Self {
        IoError::Malformed(e.to_string())
    }
}

/// On-disk form. `checksum` is the SHA-256 of the canonical serialization
/// of the other three fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub format_version: u64,
    pub graph: CanvasGraph,
    pub config: EngineConfig,
    pub checksum: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Canonical bytes of a graph on its own; what replay is compared on.
pub fn canonical_graph(graph: &CanvasGraph) -> String {
    to_canonical(graph).expect("graph serializes")
}

fn body(graph: &CanvasGraph, config: &EngineConfig) -> Result<Value, IoError> {
    Ok(serde_json::json!({
        "format_version": FORMAT_VERSION,
        "graph": serde_json::to_value(graph)?,
        "config": serde_json::to_value(config)?,
    }))
}

/// The exact bytes `save_graph` writes, and their checksum.
pub fn encode_graph(graph: &CanvasGraph, config: &EngineConfig) -> Result<(String, String), IoError> {
    let report = graph.validate();
    if !report.is_empty() {
        return Err(IoError::ValidationFailed(report));
    }
    config.validate()?;
    let mut value = body(graph, config)?;
    let checksum = sha256_hex(canonical_value(&value).as_bytes());
    value["checksum"] = Value::String(checksum.clone());
    Ok((canonical_value(&value), checksum))
}

/// Inverse of [`encode_graph`].
pub fn decode_graph(text: &str) -> Result<(CanvasGraph, EngineConfig), IoError> {
    let mut value: Value = serde_json::from_str(text)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| IoError::Malformed("top level is not an object".into()))?;
    let version = obj
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| IoError::Malformed("missing format_version".into()))?;
    if version != FORMAT_VERSION {
        return Err(IoError::UnknownFormatVersion(version));
    }
    let stored = match obj.remove("checksum") {
        Some(Value::String(s)) => s,
        _ => return Err(IoError::Malformed("missing checksum".into())),
    };
    let computed = sha256_hex(canonical_value(&value).as_bytes());
    if stored != computed {
        return Err(IoError::ChecksumMismatch { stored, computed });
    }
    let graph: CanvasGraph = serde_json::from_value(value["graph"].take())?;
    let config: EngineConfig = serde_json::from_value(value["config"].take())?;
    config.validate()?;
    let report = graph.validate();
    if !report.is_empty() {
        return Err(IoError::ValidationFailed(report));
    }
    Ok((graph, config))
}

/// Writes atomically (temp file + rename) and returns the checksum.
pub fn save_graph(graph: &CanvasGraph, config: &EngineConfig, path: &Path) -> Result<String, IoError> {
    let (text, checksum) = encode_graph(graph, config)?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text.as_bytes())?;
    fs::rename(&tmp, path)?;
    Ok(checksum)
}

pub fn load_graph(path: &Path) -> Result<(CanvasGraph, EngineConfig), IoError> {
    decode_graph(&fs::read_to_string(path)?)
}

/// Rebuilds a graph from its audit file, optionally stopping after `up_to_seq`.
pub fn replay_audit(log_path: &Path, up_to_seq: Option<u64>) -> Result<CanvasGraph, ReplayError> {
    replay_records(&read_records(log_path)?, up_to_seq)
}
