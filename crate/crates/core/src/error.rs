use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("vocabulary: duplicate token {token:?} at line {line}")]
    DuplicateToken { token: String, line: usize },

    #[error("vocabulary: missing special token {0:?}")]
    MissingSpecialToken(String),

    #[error("vocabulary: needs at least 2 tokens, found {0}")]
    VocabularyTooSmall(usize),

    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: usize },

    #[error("occurrence memory is empty (no documents ingested)")]
    EmptyMemory,

    #[error("document {0} has zero length")]
    ZeroLengthDocument(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("row {0} has zero degree")]
    ZeroDegree(usize),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("checksum mismatch in {0}")]
    Checksum(PathBuf),

    #[error("dataset {path}, line {line}: {reason}")]
    Dataset {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("external embeddings: {0}")]
    External(String),

    #[error("no labeled data")]
    NoLabeledData,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("omm version mismatch: bundle built from {bundle}, memory at {memory}")]
    VersionMismatch { bundle: u64, memory: u64 },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::ZeroDegree(_) => 3,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
