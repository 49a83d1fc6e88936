//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up; the message names both shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Numerical failure (non-finite values, zero norm where one is required).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An API contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// Invalid data (labels out of range, empty dataset, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Malformed binary input; `offset` is the byte position of the failure.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Request outside the supported problem size.
    #[error("scope error: {0}")]
    Scope(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Prefix the message with the training step it occurred at, keeping the variant.
    pub(crate) fn at_step(self, step: usize) -> Error {
        match self {
            Error::Shape(m) => Error::Shape(format!("step {step}: {m}")),
            Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
            Error::Contract(m) => Error::Contract(format!("step {step}: {m}")),
            Error::Config(m) => Error::Config(format!("step {step}: {m}")),
            Error::Data(m) => Error::Data(format!("step {step}: {m}")),
            Error::Parse { offset, message } => Error::Parse {
                offset,
                message: format!("step {step}: {message}"),
            },
            Error::Scope(m) => Error::Scope(format!("step {step}: {m}")),
            Error::Io(e) => Error::Io(e),
        }
    }
}
