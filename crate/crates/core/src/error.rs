use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input domain error: {0}")]
    InputDomain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate prototype: row {row} has norm {norm:e}")]
    DegeneratePrototype { row: usize, norm: f64 },

    #[error("invalid episode request: {0}")]
    InvalidShape(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("class {class} has {available} items, episode needs {required}")]
    Capacity {
        class: i64,
        available: usize,
        required: usize,
    },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("archive integrity: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
