//! Crate-level error type for everything above the tensor engine.

use thiserror::Error;

use crate::tensor::TensorError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("mask shapes differ: {0:?} vs {1:?}")]
    MaskShape((usize, usize), (usize, usize)),
    #[error("{0}: mask is empty")]
    EmptyMask(&'static str),
    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid { op, detail: detail.into() }
    }

    /// True for errors caused by bad input data rather than configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data(_) | Error::Image(_) | Error::Io(_) | Error::MaskShape(..) | Error::EmptyMask(_) | Error::Csv(_)
        )
    }
}
