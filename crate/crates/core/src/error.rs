use thiserror::Error;

/// Malformed or mismatched binary/text file.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: Vec<u8> },
    #[error("unsupported {format} version {version}")]
    UnsupportedVersion { format: &'static str, version: u32 },
    #[error("truncated payload while reading {0}")]
    Truncated(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("invalid utf-8 in {0}")]
    InvalidUtf8(&'static str),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

impl FormatError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> u32 {
        match self {
            FormatError::BadMagic { .. } => 10,
            FormatError::UnsupportedVersion { .. } => 11,
            FormatError::Truncated(_) => 12,
            FormatError::DimMismatch { .. } => 13,
            FormatError::InvalidUtf8(_) => 14,
            FormatError::Malformed { .. } => 15,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("degenerate (near-zero) vector in comparison")]
    Degenerate,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("coverage violated: {0} pixels received no contribution")]
    Coverage(usize),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Coarse failure class, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Usage,
            Error::Io(_) | Error::Format(_) | Error::Json(_) | Error::DimMismatch { .. } => {
                ErrorClass::Data
            }
            Error::Degenerate | Error::Coverage(_) | Error::Numeric(_) => ErrorClass::Numeric,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
