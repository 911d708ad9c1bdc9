//! Library side of the `dxmi` command-line tool: run configs, checkpoints,
//! metrics files, renders and the subcommands themselves.

use std::path::Path;

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;
pub mod render;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
    #[error("numerical error: {0}")]
    Numeric(String),
    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: u64, reason: String },
}

impl CliError {
    /// 2 for bad input, 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Checkpoint(_) => 2,
            CliError::Divergence { .. } => 3,
            CliError::Io(_) | CliError::Numeric(_) => 1,
        }
    }
}

impl From<dxmi_core::Error> for CliError {
    fn from(e: dxmi_core::Error) -> Self {
        match e {
            dxmi_core::Error::Divergence { step, reason } => CliError::Divergence { step, reason },
            e => CliError::Numeric(e.to_string()),
        }
    }
}

/// Writes a file, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
