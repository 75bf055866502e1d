use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutogradError {
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T, E = AutogradError> = std::result::Result<T, E>;
