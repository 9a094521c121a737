use thiserror::Error;

/// Errors raised by model construction, inference and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A cavity distribution is not positive definite; EP skips the site for that sweep.
    #[error("improper cavity: {0}")]
    Cavity(String),

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("MCMC initialization failed: {0}")]
    Initialization(String),

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
