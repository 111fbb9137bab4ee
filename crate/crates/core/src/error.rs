use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("{op}: non-finite values in {what}")]
    NonFinite { op: &'static str, what: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Image { path: PathBuf, msg: String },

    #[error(transparent)]
    Weights(#[from] crate::model::weights::WeightsError),

    #[error("dataset: {0}")]
    Dataset(String),
}

impl Error {
    pub(crate) fn shape(
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    ) -> Self {
        Error::Shape {
            op,
            dim,
            expected,
            actual,
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }
}
