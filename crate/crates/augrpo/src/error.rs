use std::path::Path;

/// Failure of a command, classified by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn at(path: &Path, err: impl std::fmt::Display) -> CliError {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<augrpo_core::Error> for CliError {
    fn from(e: augrpo_core::Error) -> Self {
        use augrpo_core::Error as E;
        match e {
            E::Numeric(_) => CliError::Numeric(e.to_string()),
            E::InvalidConfig(_) | E::UnknownTemplate(_) | E::InvalidOrder(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
