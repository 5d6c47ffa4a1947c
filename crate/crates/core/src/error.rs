use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{origin}:{line}: malformed record: {message}")]
    Malformed {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("corpus is empty after filtering")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("candidate pool is empty")]
    EmptyPool,

    #[error("zero-norm vector")]
    ZeroNorm,

    #[error("store format: {0}")]
    Format(String),

    #[error("store checksum mismatch: recorded {recorded:08x}, computed {computed:08x}")]
    Checksum { recorded: u32, computed: u32 },

    #[error("truncated store: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("provider: {0}")]
    Provider(String),

    #[error("run is missing {} post(s): {}", .0.len(), .0.join(", "))]
    MissingPosts(Vec<String>),

    #[error("language code `{0}` is not in the registry")]
    UnknownLanguage(String),

    #[error("cannot form {clusters} clusters from {points} points")]
    TooFewPoints { points: usize, clusters: usize },

    #[error("reports are not comparable: {0}")]
    Incomparable(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}
