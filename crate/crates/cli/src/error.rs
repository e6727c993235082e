use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or config contents.
    #[error("config error: {0}")]
    Config(String),

    #[error("not found: {}", .0.display())]
    Missing(PathBuf),

    #[error(transparent)]
    Core(#[from] mvfd::Error),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 for usage and config problems, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Missing(_) => 2,
            CliError::Core(mvfd::Error::InvalidArgument(_)) => 2,
            _ => 1,
        }
    }
}
