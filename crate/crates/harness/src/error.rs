use std::path::PathBuf;

use thiserror::Error;

/// Failure classes of the command-line tool; each maps to its own exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("missing artifact: {}", path.display())]
    ArtifactMissing { path: PathBuf },
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::ConfigInvalid(_) => 2,
            HarnessError::ArtifactMissing { .. } => 3,
            HarnessError::Runtime(_) => 4,
        }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

/// Problems reading or writing a persisted artifact.
#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{}: format version {found}, expected {expected}", path.display())]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("{}: corrupt file ({reason})", path.display())]
    CorruptFile { path: PathBuf, reason: String },
    #[error("refusing to overwrite {} with different contents", path.display())]
    WouldOverwrite { path: PathBuf },
    #[error("missing artifact: {}", path.display())]
    Missing { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl From<PersistError> for HarnessError {
    fn from(e: PersistError) -> Self {
        match e {
            PersistError::Missing { path } => HarnessError::ArtifactMissing { path },
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for HarnessError {
            fn from(e: $t) -> Self {
                HarnessError::Runtime(e.to_string())
            }
        }
    )*};
}

runtime_from!(
    visracer_core::GeometryError,
    visracer_learn::phase1::Phase1Error,
    visracer_learn::train::TrainError,
    visracer_learn::sac::SacError,
    visracer_learn::env::EnvError,
    visracer_nn::NnError
);

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
