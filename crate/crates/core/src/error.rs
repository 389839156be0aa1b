use thiserror::Error;

/// Errors raised by the transform, model and inference code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("parse error in {layer}: {message}")]
    Parse { layer: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("internal consistency failure: {0}")]
    Consistency(String),

    #[error("image format error: {0}")]
    Image(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
