use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied data the operation refuses (non-finite values, out-of-range knobs).
    #[error("rejected input: {0}")]
    InvalidInput(String),
    /// Internal contract broken: shape mismatch, dispatch bug, wrong part count.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A file did not match its binary layout.
    #[error("format error: {0}")]
    Format(String),
    /// A checkpoint was written for a different network layout.
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Contract(_) => "contract_violation",
            Error::Format(_) => "format",
            Error::Architecture(_) => "architecture",
            Error::Diverged(_) => "diverged",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
