use std::path::PathBuf;

use thiserror::Error;

/// Exit code for configuration and regime-gate failures.
pub const EXIT_VALIDATION: u8 = 2;
/// Exit code for numerical failures and failed verdicts.
pub const EXIT_NUMERIC: u8 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ReadConfig {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("regime gate: {0}")]
    Gate(String),
    #[error("expression {expr:?}: {reason}")]
    Expr { expr: String, reason: String },
    #[error("numerical failure: {0}")]
    Numeric(#[from] qlsv_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ReadConfig { .. } | CliError::Config(_) | CliError::Gate(_) | CliError::Expr { .. } => {
                EXIT_VALIDATION
            }
            CliError::Numeric(_) | CliError::Io { .. } => EXIT_NUMERIC,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
