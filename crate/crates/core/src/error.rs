use thiserror::Error;

/// Errors raised by the model, the evaluators and the optimizers.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A factorization or solve could not be completed.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The forward pass produced a non-finite value.
    #[error("non-finite model output at sample {index}")]
    NonFinite { index: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
