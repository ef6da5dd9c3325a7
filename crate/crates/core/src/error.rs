use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is out of its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A byte stream or file failed to parse (bad magic, truncated payload,
    /// checksum mismatch, malformed header, ...).
    #[error("stream error: {0}")]
    Stream(String),

    /// Array shapes do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric precondition was violated (zero bin width, singular sigma,
    /// diverged training, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
