use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot parse {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] willmore_core::Error),
    /// A check performed by the command itself failed, e.g. the mask audit.
    #[error("check failed: {0}")]
    Check(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for configuration and input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Toml { .. } | CliError::Io { .. } | CliError::Format(_) | CliError::Csv(_) => 1,
            CliError::Check(_) => 2,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &willmore_core::Error) -> i32 {
    use willmore_core::Error as E;
    match e {
        E::FlowStep { source, .. } => core_exit_code(source),
        E::Extinction { .. }
        | E::NotMonotone { .. }
        | E::NewtonNotConverged { .. }
        | E::TrainingNotConverged { .. }
        | E::NonFinite(_) => 2,
        _ => 1,
    }
}
