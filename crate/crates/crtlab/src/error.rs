use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] crtlab_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    /// Malformed input file or document.
    #[error("{what}: {reason}")]
    Format { what: String, reason: String },
    #[error("config: {0}")]
    Config(String),
    /// An operation that would overwrite something it should not.
    #[error("refused: {0}")]
    Refused(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format { what: what.into(), reason: reason.into() }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code: 1 for invalid input or configuration, 2 for
    /// failures while running.
    pub fn exit_code(&self) -> i32 {
        use crtlab_core::Error as C;
        match self {
            Error::Config(_) | Error::Format { .. } | Error::Refused(_) => 1,
            Error::Core(C::Config(_) | C::InvalidArgument { .. } | C::ShapeMismatch { .. } | C::Empty(_)) => 1,
            _ => 2,
        }
    }
}
