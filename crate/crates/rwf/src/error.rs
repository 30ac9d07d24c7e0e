use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RwfError {
    #[error(transparent)]
    Core(#[from] rwf_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed file at byte {offset}: {message}", path.display())]
    Format { path: PathBuf, offset: u64, message: String },
    /// Unusable input data: images, datasets.
    #[error("{0}")]
    Data(String),
    /// Bad run configuration or arguments.
    #[error("{0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

pub type Result<T> = std::result::Result<T, RwfError>;

impl RwfError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RwfError::Io { path: path.into(), source }
    }

    /// Process exit code for the command line.
    pub fn exit_code(&self) -> i32 {
        match self {
            RwfError::Verification(_) => 1,
            RwfError::Config(_) => 2,
            RwfError::Core(rwf_core::Error::Config(_)) => 2,
            _ => 3,
        }
    }
}
