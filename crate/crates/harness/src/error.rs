use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] borda_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Table {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{count} trial(s) stopped early on a numerical failure")]
    PartialResults { count: usize },
}

impl HarnessError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        HarnessError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    /// Process exit code: 1 for configuration, 2 for numerical, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Core(e) if e.is_numerical() => 2,
            HarnessError::Core(borda_core::Error::InvalidInput(_) | borda_core::Error::DimensionMismatch { .. }) => 1,
            HarnessError::Core(_) | HarnessError::PartialResults { .. } => 2,
            HarnessError::Io { .. } | HarnessError::Table { .. } | HarnessError::Json { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
