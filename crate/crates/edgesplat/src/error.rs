//! Error taxonomy shared across the crate.
//!
//! Three failure classes matter operationally and map onto distinct process
//! exit codes in the CLI:
//!
//! * [`Error::Contract`] — a caller violated a documented precondition
//!   (out-of-range parameter, malformed file, inconsistent sizes). Exit 2.
//! * [`Error::Structure`] — internal referential integrity is broken
//!   (a sketch indexes a dead or out-of-range pool point). Exit 2.
//! * [`Error::Numerical`] — the math failed (NaN gradients, singular
//!   covariance). Exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition was violated by the caller or by an input file.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Referential integrity is broken (dead/out-of-range control point index).
    #[error("structural error: {0}")]
    Structure(String),

    /// A numerical failure (NaN/Inf, singular matrix) aborted the operation.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error: {0}")]
    Png(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code the CLI should terminate with for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<png::DecodingError> for Error {
    fn from(e: png::DecodingError) -> Self {
        Error::Png(e.to_string())
    }
}

impl From<png::EncodingError> for Error {
    fn from(e: png::EncodingError) -> Self {
        Error::Png(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
