use std::path::PathBuf;

use qswing_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("checkpoint {0} not found; run `qswing train` first or pass --train-first")]
    MissingCheckpoint(PathBuf),
    #[error("checkpoint does not match the configuration: {0}")]
    StaleCheckpoint(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("worker pool: {0}")]
    Workers(String),
}

impl CliError {
    /// Process exit status; documented in the README.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Core(CoreError::Config(_)) => 3,
            Self::MissingCheckpoint(_) => 4,
            Self::StaleCheckpoint(_) | Self::Core(CoreError::Checkpoint(_)) | Self::Core(CoreError::Shape(_)) => 5,
            Self::Core(CoreError::SizeGuard(_)) => 6,
            Self::Core(CoreError::Diverged { .. }) => 7,
            Self::Write { .. } | Self::Core(CoreError::Io(_)) => 8,
            Self::Workers(_) => 3,
            Self::Core(_) => 1,
        }
    }
}
