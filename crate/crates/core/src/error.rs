use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stream integrity error at frame {frame}: {message}")]
    StreamIntegrity { frame: usize, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{message} (byte offset {offset}{})", frame.map(|f| format!(", frame {f}")).unwrap_or_default())]
    Format {
        offset: u64,
        frame: Option<usize>,
        message: String,
    },
    #[error("invalid stream: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CodecError> = std::result::Result<T, E>;
