use std::fmt;
use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes are incompatible with the requested operation.
    Dimension(String),
    /// An architecture or run configuration violates its invariants.
    Config(String),
    /// A caller broke an operation's precondition (non-scalar loss, asymmetric matrix, ...).
    Contract(String),
    /// A forward operation produced NaN or infinity from finite inputs.
    NonFinite(&'static str),
    /// Too few samples for a statistic.
    InsufficientData(String),
    /// Malformed file contents.
    Format(String),
    /// File contents fail their integrity check.
    Corruption(String),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::NonFinite(op) => write!(f, "non-finite value produced by {op}"),
            Error::InsufficientData(m) => write!(f, "insufficient data: {m}"),
            Error::Format(m) => write!(f, "format error: {m}"),
            Error::Corruption(m) => write!(f, "corruption error: {m}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
