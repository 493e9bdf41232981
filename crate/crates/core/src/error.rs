//! Error types shared by every pipeline stage.

use std::path::PathBuf;
use thiserror::Error;

/// Coarse error class, used by the CLI to pick an exit code and by bulk
/// drivers to decide whether an error is per-example or fatal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad configuration (exit 2).
    Config,
    /// Bad or missing data (exit 3).
    Data,
    /// Generation endpoint unreachable or misbehaving (exit 4).
    Endpoint,
    /// A single example could not be processed; bulk drivers skip and continue.
    Skip,
}

#[derive(Debug, Error)]
pub enum KaftError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed JSON: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: not a {expected} record: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        expected: &'static str,
        message: String,
    },

    #[error("invalid record `{id}`: field `{field}`: {message}")]
    Validation {
        id: String,
        field: &'static str,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("request timed out: {0}")]
    Timeout(String),

    #[error("skipped `{id}`: {reason}")]
    Skip { id: String, reason: String },

    #[error("construction failed for `{id}`: {message}")]
    Construction { id: String, message: String },

    #[error("unknown mixture tag: {0}")]
    UnknownTag(String),
}

impl KaftError {
    pub fn class(&self) -> ErrorClass {
        match self {
            KaftError::Config(_) | KaftError::UnknownTag(_) => ErrorClass::Config,
            KaftError::Transport(_) | KaftError::Protocol(_) | KaftError::Timeout(_) => {
                ErrorClass::Endpoint
            }
            KaftError::Skip { .. } => ErrorClass::Skip,
            _ => ErrorClass::Data,
        }
    }

    pub fn validation(id: impl Into<String>, field: &'static str, message: impl Into<String>) -> Self {
        KaftError::Validation {
            id: id.into(),
            field,
            message: message.into(),
        }
    }

    pub fn skip(id: impl Into<String>, reason: impl Into<String>) -> Self {
        KaftError::Skip {
            id: id.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, KaftError>;
