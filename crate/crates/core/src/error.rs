use thiserror::Error;

/// Errors raised by the homogenization pipeline.
///
/// The variants map onto the CLI exit codes: configuration problems,
/// resolution problems (the discretization is too coarse to answer the
/// question), domain errors for inputs outside an operation's contract,
/// and failed property checks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("target unreachable: {0}")]
    Unreachable(String),

    #[error("property check failed: {0}")]
    Property(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
