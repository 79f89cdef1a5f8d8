//! Crate-wide error type.
//!
//! Every fallible operation in the pipeline returns [`Result`]. The variants
//! are grouped so the CLI can map them onto exit codes: usage/config problems,
//! data problems (parsing, alignment, splits, training), and backend problems
//! (HTTP failures, timeouts, exhausted scripts).

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the glossing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Filesystem error, annotated with the path that was being accessed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input that could not be parsed. `location` identifies the
    /// file and line (or record) at fault.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Source/gloss structure mismatch in an interlinear record.
    #[error("alignment error at {location}: {message}")]
    Alignment { location: String, message: String },

    /// An argument outside its documented domain (bad threshold, zero k, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Invalid experiment or backend configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Data-level problem that is not a parse error (empty corpus, label
    /// missing from a vocabulary, incompatible checkpoint, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Training could not continue (non-finite loss, divergence).
    #[error("training error: {0}")]
    Training(String),

    /// A model backend failed after retries, timed out, or was misconfigured.
    #[error("backend error: {0}")]
    Backend(String),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Helper for [`Error::Io`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Helper for [`Error::Parse`].
    pub fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Helper for [`Error::Alignment`].
    pub fn alignment(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Alignment {
            location: location.into(),
            message: message.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
