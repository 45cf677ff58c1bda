use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;
use vmshield::{AhpError, ScenarioError, TraceError};

/// Exit status 1: the inputs were understood but the operation failed.
pub const EXIT_DOMAIN: u8 = 1;
/// Exit status 2: bad arguments or unreadable/unparseable input.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Ahp(#[from] AhpError),
    #[error("{}: {source}", path.display())]
    Trace { path: PathBuf, source: TraceError },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Domain(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn read(path: &Path, source: io::Error) -> Self {
        CliError::Read { path: path.to_path_buf(), source }
    }

    pub fn write(path: &Path, source: io::Error) -> Self {
        CliError::Write { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, message: impl Into<String>) -> Self {
        CliError::Parse { path: path.to_path_buf(), message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. } | CliError::Parse { .. } | CliError::Usage(_) => EXIT_USAGE,
            CliError::Trace { source, .. } => match source {
                TraceError::Parse { .. } | TraceError::UnknownHeader(_) | TraceError::Csv(_) | TraceError::Io(_) => EXIT_USAGE,
                _ => EXIT_DOMAIN,
            },
            CliError::Scenario(ScenarioError::Parse { .. } | ScenarioError::Io { .. }) => EXIT_USAGE,
            CliError::Write { .. } | CliError::Ahp(_) | CliError::Scenario(_) | CliError::Domain(_) => EXIT_DOMAIN,
        }
    }
}
