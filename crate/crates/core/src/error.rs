use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error("unknown class: {0}")]
    UnknownClass(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
