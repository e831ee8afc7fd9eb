use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<mend_core::error::Error> for CliError {
    fn from(e: mend_core::error::Error) -> Self {
        use mend_core::error::Error as E;
        match e {
            E::Numeric(m) => CliError::Numeric(m),
            E::Io(e) => CliError::Io(e.to_string()),
            E::Format(m) => CliError::Io(format!("format error: {m}")),
            E::Json(e) => CliError::Io(format!("json error: {e}")),
            E::Argument(m) | E::Dimension(m) => CliError::Usage(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(format!("json error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
