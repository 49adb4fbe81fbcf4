use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad exponents, cutoffs, shapes.
    #[error("configuration: {0}")]
    Config(String),

    /// Geometric preconditions violated (point on the boundary, etc).
    #[error("domain: {0}")]
    Domain(String),

    /// Non-finite values or other numerical breakdown during integration.
    #[error("numerical failure on path {path} at step {step}: {detail}")]
    Numerical {
        path: u64,
        step: u64,
        detail: String,
    },

    /// A run directory is missing a required artifact.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("parse: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
