use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("internal error: site {0:?} is outside the generated cover")]
    OutsideCover(Vec<i64>),
    #[error("planning error: {0}")]
    Planning(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
