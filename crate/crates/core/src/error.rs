use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unknown name: {0}")]
    UnknownName(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("foreign term: {0}")]
    ForeignTerm(String),
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
