use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Check(_) => 5,
        }
    }

    pub fn io(path: impl Into<PathBuf>, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.into().display()))
    }
}

impl From<swapvae_core::Error> for CliError {
    fn from(e: swapvae_core::Error) -> Self {
        use swapvae_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) => CliError::Config(msg),
            E::Divergence(_) | E::Numeric(_) | E::Domain(_) => CliError::Numeric(msg),
            E::Shape { .. }
            | E::DegenerateBatch(_)
            | E::Validation(_)
            | E::Parse { .. }
            | E::Checkpoint(_)
            | E::Io { .. }
            | E::Json(_) => CliError::Data(msg),
        }
    }
}
