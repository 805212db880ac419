use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numerics substrate, the networks and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },

    #[error("signal kind mismatch in layer {layer}: expected {expected}, got {got}")]
    SignalKind {
        layer: usize,
        expected: &'static str,
        got: &'static str,
    },

    #[error("input violates the margin precondition: min |<w_i, x>| = {observed} < {required}")]
    Margin { observed: f64, required: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
