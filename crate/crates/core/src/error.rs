use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("text is empty after normalization")]
    EmptyText,

    #[error("fill arity mismatch: context has {expected} placeholders, got {got} fills")]
    FillArity { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty object evidence for weak posterior")]
    EmptyEvidence,

    #[error("image has no regions")]
    NoRegions,

    #[error("neighbor index is empty")]
    EmptyIndex,

    #[error("not enough training pairs: need at least {need}, got {got}")]
    TooFewPairs { need: usize, got: usize },

    #[error("no eligible region for placeholder at position {position}")]
    PseudoReject { position: usize },

    #[error("unfilled placeholder at position {0}")]
    UnfilledPlaceholder(usize),

    #[error("no complete sequence satisfies all constraints within {max_len} tokens")]
    ConstraintUnsat { max_len: usize },

    #[error("non-finite loss in {term} at iteration {iteration}")]
    NonFiniteLoss { term: String, iteration: usize },

    #[error("unknown token or object: {0}")]
    Unknown(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
