use std::fmt;

/// Engine-level error taxonomy.
///
/// `Config` covers structural problems (dimension mismatches, invalid model
/// descriptions), `Data` covers value-domain violations in otherwise
/// well-shaped inputs, and `Internal` flags broken engine invariants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    Config(String),
    Data(String),
    Internal(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
