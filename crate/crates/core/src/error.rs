//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("singular configuration: {0}")]
    Singular(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("dichotomy failure: {0}")]
    DichotomyFailure(String),
    #[error("audit failure: {0}")]
    AuditFailure(String),
    #[error("unknown tube id {0}")]
    UnknownId(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
