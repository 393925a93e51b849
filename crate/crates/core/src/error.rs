use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    /// The CSV header does not match the configured column mapping.
    #[error("schema error: {0}")]
    Schema(String),

    /// An operation was called outside its domain (empty input, dimension
    /// mismatch, out-of-bounds point, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An artifact file is malformed or inconsistent with its header.
    #[error("artifact error: {0}")]
    Artifact(String),

    /// Training produced a non-finite loss; signals an exploding step.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
