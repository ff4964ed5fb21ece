use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("no manifest in {0}")]
    NoManifest(PathBuf),

    #[error("stay {stay}: {reason}")]
    StayRejected { stay: String, reason: String },

    #[error("malformed tensor file {path}: {reason}")]
    TensorFormat { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("{0}")]
    Generation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape(_)
                | Error::InvalidInput(_)
                | Error::Config(_)
                | Error::NoManifest(_)
                | Error::StayRejected { .. }
                | Error::TensorFormat { .. }
                | Error::Json { .. }
        )
    }
}
