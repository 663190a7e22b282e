use std::io;
use std::path::PathBuf;

/// Process exit status for each error class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error(transparent)]
    Core(#[from] softthink::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn status(&self) -> ExitStatus {
        match self {
            HarnessError::Usage(_) => ExitStatus::Usage,
            HarnessError::Numeric(_) | HarnessError::Core(softthink::Error::Numeric { .. }) => ExitStatus::Numeric,
            _ => ExitStatus::Data,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn data(msg: impl Into<String>) -> HarnessError {
    HarnessError::Data(msg.into())
}

pub(crate) fn file_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::File { path, source }
}
