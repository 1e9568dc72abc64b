use thiserror::Error;

/// Errors raised across the library. Each variant maps onto one CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("cap exceeded: {what} needs {needed}, cap is {cap}")]
    CapExceeded {
        what: &'static str,
        needed: String,
        cap: String,
    },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    /// Short machine-readable tag used in the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Parameter(_) => "parameter",
            Error::CapExceeded { .. } => "cap_exceeded",
            Error::Construction(_) => "construction",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
