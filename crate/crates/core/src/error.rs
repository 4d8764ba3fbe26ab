use std::io;

use thiserror::Error;

use crate::repcore::LayerTag;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alignment error: expected {expected} samples, found {found} in {tag}")]
    Alignment {
        expected: usize,
        found: usize,
        tag: Box<LayerTag>,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate representation {0}: self-HSIC is numerically zero (constant layer?)")]
    DegenerateRepresentation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("layer tag mismatch at position {position}: {left} vs {right}")]
    TagMismatch {
        position: usize,
        left: Box<LayerTag>,
        right: Box<LayerTag>,
    },

    #[error("zero vector has no direction (row {0})")]
    ZeroVector(usize),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad input (files, flags, data) rather than a
    /// bug or an environment failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Divergence { .. })
    }
}
