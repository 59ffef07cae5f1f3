use std::path::{Path, PathBuf};

/// Errors from file IO, configuration and the core crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] mdlas_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A user-supplied file (config or spec) that does not parse.
    #[error("{}: invalid {field}: {reason}", path.display())]
    Config { path: PathBuf, field: String, reason: String },
    /// A file written by this crate that is missing pieces or inconsistent.
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 for usage, validation and contract errors (a
    /// request the model cannot serve), 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) | Error::Config { .. } => 2,
            Error::Core(
                mdlas_core::Error::Validation { .. } | mdlas_core::Error::Vocabulary(_) | mdlas_core::Error::Contract(_),
            ) => 2,
            _ => 1,
        }
    }
}
