use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("bad IDX magic number 0x{observed:08x}")]
    BadMagic { observed: u32 },

    #[error("truncated IDX {what}: expected {expected} bytes, found {actual}")]
    Truncated {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("IDX payload has {extra} trailing bytes after the declared {expected}")]
    TrailingBytes { expected: usize, extra: usize },

    #[error("non-finite {quantity} at round {round}")]
    NonFinite { round: usize, quantity: &'static str },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// Rejects NaN, infinities and values below `min`.
pub(crate) fn ensure_at_least(name: &str, value: f64, min: f64) -> Result<()> {
    if !value.is_finite() || value < min {
        return Err(Error::invalid(format!("{name} must be finite and >= {min}, got {value}")));
    }
    Ok(())
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if !value.is_finite() || value <= 0.0 {
        return Err(Error::invalid(format!("{name} must be finite and > 0, got {value}")));
    }
    Ok(())
}
