//! Crate-wide error type.
//!
//! Errors are grouped by how the CLI maps them to exit codes: configuration
//! problems (2), artifact/format validation (3), numeric failures such as a
//! NaN loss during training (4), everything else (1).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/batch dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid hyperparameter, label, or step value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Augmentation policy cannot be applied to the given class profile.
    #[error("policy error: {0}")]
    Policy(String),

    /// An on-disk artifact is missing or incompatible with the run config.
    #[error("artifact validation: {0}")]
    Artifact(String),

    /// A model or feature file failed to parse (bad magic, version, truncation).
    #[error("format error: {0}")]
    Format(String),

    /// Training produced a non-finite value; the run aborts instead of
    /// continuing silently.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Policy(_) => 2,
            Error::Artifact(_) | Error::Format(_) => 3,
            Error::Numeric(_) => 4,
            Error::Shape(_) | Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
