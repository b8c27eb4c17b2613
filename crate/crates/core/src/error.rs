use thiserror::Error;

/// Errors raised by distlab operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate density")]
    DegenerateDensity,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("unsupported point")]
    UnsupportedPoint,

    #[error("blow-up at tau = {0}")]
    BlowUp(f64),

    #[error("size cap exceeded: {n} > {cap}")]
    SizeCap { n: usize, cap: usize },

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("empty log")]
    EmptyLog,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
