use thiserror::Error;

/// Errors raised by the library.
///
/// The variants line up with how a caller is expected to react: `Usage`
/// means the call itself was malformed, `Data` means the inputs violate a
/// documented precondition, `Config` means a generator configuration is
/// inconsistent and `Internal` flags a broken invariant inside the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("internal invariant failure: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
