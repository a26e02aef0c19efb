use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, received {received}")]
    Shape {
        what: &'static str,
        expected: String,
        received: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown config key `{key}`; valid keys: {valid}")]
    UnknownKey { key: String, valid: String },

    #[error("prototype bank not initialized: {0}")]
    UninitializedBank(String),

    #[error("{path}:{line}: {message}")]
    SplitFile {
        path: String,
        line: usize,
        message: String,
    },

    #[error("failed to load image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("undefined conditional p(y | a={a}, x'={x}) carries nonzero weight")]
    UndefinedConditional { a: usize, x: usize },

    #[error("invalid causal model: {0}")]
    Scm(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (samples {indices:?}): {components}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        indices: Vec<usize>,
        components: String,
    },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: &'static str, expected: impl ToString, received: impl ToString) -> Error {
    Error::Shape {
        what,
        expected: expected.to_string(),
        received: received.to_string(),
    }
}
