use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A distribution or operator parameter violates its invariant.
    #[error("invalid parameter {field}: {message}")]
    InvalidParameter { field: &'static str, message: String },

    /// A vector or matrix has the wrong dimension for the operation.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The FMGF argument lies outside the convergence region of the law.
    #[error("outside FMGF domain: {0}")]
    OutsideFmgfDomain(String),

    /// A factorial-moment order beyond the supported cap was requested.
    #[error("factorial-moment order {order} exceeds the supported cap {cap}")]
    UnsupportedOrder { order: u32, cap: u32 },

    /// A distribution spec, vector, matrix, or pmf file failed to parse.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
