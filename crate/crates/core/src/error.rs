use std::io;

use thiserror::Error;

/// Errors produced by the fusion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A cube, model or CSV file did not match its declared layout.
    #[error("format error in `{field}`: {message}")]
    Format { field: &'static str, message: String },

    #[error("non-finite value at iteration {iteration}, tensor {tensor} (layer {layer}), index {index}: {detail}")]
    NonFinite {
        iteration: u64,
        tensor: usize,
        layer: usize,
        index: usize,
        detail: String,
    },

    #[error("training diverged at iteration {iteration}; last finite total loss {last_finite_total:e}")]
    Diverged {
        iteration: u64,
        last_finite_total: f64,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(field: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            field,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
