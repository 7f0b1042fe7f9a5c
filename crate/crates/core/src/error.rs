//! Error type shared by every module of the lab.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    /// An input fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A higher-is-better score sits at or below 4/5 of its random floor.
    #[error("{metric}: score {value} is at or below the random floor guard {guard} (0.8 x {floor})")]
    BelowRandomFloor {
        metric: String,
        value: f64,
        floor: f64,
        guard: f64,
    },

    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed weights file; `offset` is the byte position where decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("state error: {0}")]
    State(String),

    /// An energy source could not be read.
    #[error("energy source error: {0}")]
    Source(String),

    /// Malformed CSV or configuration input; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LabError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        LabError::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        LabError::Shape(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        LabError::Format {
            offset,
            message: msg.into(),
        }
    }
}
