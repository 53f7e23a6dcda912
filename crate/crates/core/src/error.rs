use thiserror::Error;

/// Error type shared by every module in the crate.
///
/// The CLI maps variants onto exit codes: configuration and validation
/// problems exit 2, file problems exit 3, everything else exits 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI convention (1 runtime, 2 config, 3 I/O).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Compatibility(_) | Error::Json(_) => 2,
            Error::Io(_) | Error::Format(_) => 3,
            _ => 1,
        }
    }
}
