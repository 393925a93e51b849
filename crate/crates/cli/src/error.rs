use std::path::PathBuf;

use thiserror::Error;

/// Pipeline failures, classified for distinct process exit codes.
#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad configuration file, key, or value. Exit code 2.
    #[error("config error: {0}")]
    Config(String),

    /// A required upstream artifact does not exist. Exit code 3.
    #[error("missing artifact for stage `{stage}`: {path} (run `hotspot {stage}` first)")]
    MissingArtifact { stage: &'static str, path: PathBuf },

    /// An artifact exists but was produced under a different configuration.
    #[error("stale artifact: {0} (rerun the stage or pass --force)")]
    StaleArtifact(String),

    #[error(transparent)]
    Core(#[from] hotspot_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("runtime error: {0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingArtifact { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
