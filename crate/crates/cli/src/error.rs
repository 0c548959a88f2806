use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] mapft_core::Error),
    #[error("unsupported checkpoint format version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{what}: hash mismatch, recorded {recorded} but content hashes to {computed}")]
    Tampered {
        what: &'static str,
        recorded: String,
        computed: String,
    },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(mapft_core::Error::Config(_) | mapft_core::Error::Range { .. }) => 2,
            _ => 1,
        }
    }
}
