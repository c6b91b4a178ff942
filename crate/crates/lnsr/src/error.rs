use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] lnsr_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Errors caused by bad input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Self::Config(_) | Self::Format { .. } => true,
            Self::Core(e) => matches!(
                e,
                lnsr_core::Error::Config { .. } | lnsr_core::Error::Parse { .. } | lnsr_core::Error::Index { .. }
            ),
            Self::Io { .. } | Self::Csv(_) => false,
        }
    }
}
