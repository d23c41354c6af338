use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the toolkit. Every variant maps onto a stable
/// [`ErrorCategory`] so callers (CLI, C bindings) can dispatch without
/// parsing messages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCategory {
    Contract,
    Domain,
    Ingestion,
    Shape,
    NonFinite,
    Divergence,
    Empty,
    Config,
    Format,
    Io,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Contract => "contract",
            ErrorCategory::Domain => "domain",
            ErrorCategory::Ingestion => "ingestion",
            ErrorCategory::Shape => "shape",
            ErrorCategory::NonFinite => "non_finite",
            ErrorCategory::Divergence => "divergence",
            ErrorCategory::Empty => "empty",
            ErrorCategory::Config => "config",
            ErrorCategory::Format => "format",
            ErrorCategory::Io => "io",
        }
    }

    /// Process exit code used by the CLI. Zero is reserved for success.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Contract => 10,
            ErrorCategory::Domain => 11,
            ErrorCategory::Ingestion => 12,
            ErrorCategory::Shape => 13,
            ErrorCategory::NonFinite => 14,
            ErrorCategory::Divergence => 15,
            ErrorCategory::Empty => 16,
            ErrorCategory::Config => 17,
            ErrorCategory::Format => 18,
            ErrorCategory::Io => 19,
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Contract(_) => ErrorCategory::Contract,
            Error::Domain(_) => ErrorCategory::Domain,
            Error::Ingestion(_) => ErrorCategory::Ingestion,
            Error::Shape(_) => ErrorCategory::Shape,
            Error::NonFinite(_) => ErrorCategory::NonFinite,
            Error::Divergence(_) => ErrorCategory::Divergence,
            Error::Empty(_) => ErrorCategory::Empty,
            Error::Config(_) => ErrorCategory::Config,
            Error::Format(_) => ErrorCategory::Format,
            Error::Io(_) => ErrorCategory::Io,
        }
    }
}

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(format!($($arg)*)))
    };
}
pub(crate) use bail;
