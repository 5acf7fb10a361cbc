use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Grids or dimensions of two objects do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numerical routine failed to produce a usable value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Integration produced a non-finite state.
    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },

    /// The operation is not defined for this kind of model.
    #[error("out of scope: {0}")]
    Scope(String),

    /// Least-squares design matrix is rank deficient.
    #[error("singular design matrix: {0}")]
    Singular(String),

    /// A documented precondition of the operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
