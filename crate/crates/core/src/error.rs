//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor or matrix shapes.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Input outside an operation's numeric domain (log of non-positive,
    /// division by zero, zero-norm vector, non-positive sigma, ...).
    #[error("numeric domain violation in {op}: {detail}")]
    NumericDomain { op: &'static str, detail: String },

    /// API misuse: backward on an untracked node, empty batch, k < 1, ...
    #[error("usage error: {0}")]
    Usage(String),

    /// Structurally invalid graph (e.g. an empty softmax segment).
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// Malformed input file.
    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    /// Dataset failed validation (empty relation, count mismatch, ...).
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    /// Generator or command parameters that cannot produce a valid output.
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    /// Inconsistent run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite loss encountered during training.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// Corrupt or incompatible checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime
    /// failure. A file the user named but which does not exist counts as
    /// input validation; other IO errors are runtime failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Usage(_)
            | Error::Parse { .. }
            | Error::InvalidDataset(_)
            | Error::InvalidParameters(_)
            | Error::Config(_) => true,
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            _ => false,
        }
    }
}
