//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; `field` is a dotted path into the config.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("index error: {name} = {index} out of range (limit {limit})")]
    Index {
        name: &'static str,
        index: usize,
        limit: usize,
    },

    /// Malformed file; `offset` is the byte offset where decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss; carries the last finite model.
    #[error("training diverged at epoch {epoch} (step {step}): {message}")]
    Diverged {
        epoch: usize,
        step: u64,
        message: String,
        last_finite: Box<crate::network::ModelParams>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 config, 2 data/format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::Index { .. } | Error::Format { .. } | Error::Shape(_) | Error::Io { .. } => 2,
            Error::Contract(_) | Error::Numeric(_) | Error::Diverged { .. } => 3,
        }
    }
}
