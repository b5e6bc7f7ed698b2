//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value at index {index} in {context}")]
    NonFinite { context: String, index: usize },

    #[error("expected a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-deterministic function: two identical evaluations differ ({a} vs {b})")]
    NonDeterministic { a: f64, b: f64 },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("unknown token id {0}")]
    UnknownTokenId(u32),

    #[error("model error: {0}")]
    Model(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Jsonl {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("config error: {0}")]
    Config(String),

    #[error("generation request failed after retries: {0}")]
    RequestFailed(String),

    #[error("response parse error: {0}")]
    ResponseParse(String),

    #[error("training aborted: {0}")]
    TrainAbort(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit code for the CLI: 1 for validation problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Data(_)
            | Error::Jsonl { .. }
            | Error::EmptyDataset
            | Error::Io { .. } => 1,
            _ => 2,
        }
    }
}
