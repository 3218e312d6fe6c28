use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Model { path: PathBuf, source: qbranch::Error },

    #[error(transparent)]
    Core(#[from] qbranch::Error),

    #[error("{0} tolerance gate(s) failed")]
    Gate(usize),
}

impl CliError {
    pub fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Self::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// 1 usage/config, 2 numeric failure, 3 tolerance gate.
    pub fn exit_code(&self) -> i32 {
        use qbranch::Error as E;
        match self {
            Self::Usage(_) | Self::Parse { .. } | Self::Io { .. } | Self::Model { .. } => 1,
            Self::Core(E::InvalidArgument(_) | E::NotDefinedForCritical(_) | E::InvalidIntensities(_) | E::DegenerateModel(_)) => 1,
            Self::Core(_) => 2,
            Self::Gate(_) => 3,
        }
    }
}
