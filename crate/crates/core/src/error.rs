use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eig:e} vs max {max_eig:e}")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("evaluation failed at {point:?}: {detail}")]
    Evaluation { point: Vec<f64>, detail: String },

    #[error("capability missing: {0}")]
    Capability(String),

    #[error("numeric range: {0}")]
    NumericRange(String),

    #[error("hypothesis violated at {witness:?}: {detail}")]
    Hypothesis { witness: Vec<f64>, detail: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("unknown name `{name}`; available: {}", available.join(", "))]
    Lookup { name: String, available: Vec<String> },

    #[error(transparent)]
    Expr(#[from] crate::models::expr::ExprError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
