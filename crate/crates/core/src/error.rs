use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A hyperparameter or argument is outside its valid range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Input data violates a precondition (non-finite logits, id out of range, ...).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("context overflow: {requested} positions requested, context length is {context}")]
    Capacity { requested: usize, context: usize },

    #[error("non-finite activation at layer {layer}")]
    Numeric { layer: usize },

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    /// Artifacts produced under one model/config are used with another.
    #[error("incompatible: {0}")]
    Compatibility(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}
