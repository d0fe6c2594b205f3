use deltatok_core::CodecError;
use deltatok_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = EncoderError> = std::result::Result<T, E>;
