use thiserror::Error;

/// Failure categories shared by every module.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Configuration(String),
}

impl Error {
    /// Short machine-readable tag, used in JSON error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "validation",
            Error::Capacity(_) => "capacity",
            Error::Usage(_) => "usage",
            Error::Domain(_) => "domain",
            Error::Precondition(_) => "precondition",
            Error::Configuration(_) => "configuration",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
