use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}:{line}: self-loop on node {node}", path.display())]
    SelfLoop {
        path: PathBuf,
        line: usize,
        node: u64,
    },

    #[error("{}:{line}: edge endpoint {node} is not in the node file", path.display())]
    UnknownEndpoint {
        path: PathBuf,
        line: usize,
        node: u64,
    },

    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("http error: {0}")]
    Http(String),

    #[error("malformed service response: {0}")]
    Response(String),

    #[error("no verdict word found in model output")]
    NoVerdictFound,

    #[error("prompt error: {0}")]
    Prompt(String),

    #[error("injection error: {0}")]
    Injection(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the invocation rather than by the run
    /// itself (bad config, missing input files).
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidConfig(_) | Error::MissingInput(_))
    }
}
