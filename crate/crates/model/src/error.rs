use std::path::PathBuf;

use c3det_autograd::AutogradError;
use c3det_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Tensor(#[from] AutogradError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("user input {index} has no recorded ground-truth association")]
    MissingAssociation { index: usize },
    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: &'static str, step: usize },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("missing parameter {0}")]
    MissingParameter(String),
    #[error("missing checkpoint for variant {0}")]
    MissingCheckpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl ModelError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;
