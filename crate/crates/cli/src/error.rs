use std::fmt;
use std::path::PathBuf;

use sgelu_core::Error;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or combinations. Exit code 2.
    Usage(String),
    /// A dataset file is absent. Exit code 3.
    MissingData(PathBuf),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingData(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
            CliError::MissingData(p) => write!(f, "missing data file: {}", p.display()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => CliError::Usage(m),
            Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingData(path)
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}
