use thiserror::Error;

/// Errors raised across the kernels, the simulated cluster and the engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dims(String),
    #[error("log-decay out of domain: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid sequence layout: {0}")]
    Layout(String),
    #[error("missing saved state: {0}")]
    State(String),
    #[error("operation requires f64 precision, got {0}")]
    Precision(&'static str),
    #[error("deadlock: every live rank is blocked ({0})")]
    Deadlock(String),
    #[error("tensor format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! dims_err {
    ($($arg:tt)*) => { $crate::error::Error::Dims(format!($($arg)*)) };
}
pub(crate) use dims_err;
