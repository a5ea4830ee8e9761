use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("all episodes share the instruction `{0}`; cross-episode negatives are impossible")]
    SingleInstruction(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("malformed dataset line {line}: {source}")]
    DatasetLine {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("malformed {what} line {line}: {reason}")]
    Asset {
        what: &'static str,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
