use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The transition matrix is numerically defective (no usable eigenbasis).
    #[error("unsupported matrix: {0}")]
    UnsupportedMatrix(String),

    /// λ(P) is numerically 1: the chain is reducible or periodic.
    #[error("chain does not mix: lambda(P) = {lambda}")]
    ChainNotMixing { lambda: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("reference oracle did not converge: gap {gap:.3e} above tolerance {tol:.1e}")]
    OracleNotConverged { gap: f64, tol: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("config parse error: {0}")]
    Config(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
