//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller violated an API contract (length mismatch, empty batch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A derivative was requested that the network's dimensionality cannot provide.
    #[error("unsupported derivative request: {0}")]
    Request(String),

    /// A query fell outside the valid domain of the data being queried.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced a non-finite value.
    #[error("numeric failure in {context}: {detail}")]
    Numeric { context: String, detail: String },

    /// The finite-difference solver failed (blow-up or bound violation).
    #[error("solver failure: {0}")]
    Solver(String),

    /// A checkpoint file is malformed; names the offending field.
    #[error("checkpoint format error in field `{field}`: {detail}")]
    Format { field: String, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn contract(msg: impl Into<String>) -> Self {
        CoreError::Contract(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        CoreError::Domain(msg.into())
    }

    pub fn numeric(context: impl Into<String>, detail: impl Into<String>) -> Self {
        CoreError::Numeric {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn format(field: impl Into<String>, detail: impl Into<String>) -> Self {
        CoreError::Format {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
