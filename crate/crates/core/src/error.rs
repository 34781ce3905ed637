use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("no pseudo labels kept: {0}")]
    NoPseudoLabels(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("refusing to overwrite existing output {0} (pass --force)")]
    OutputExists(PathBuf),

    #[error("phase `{phase}` failed: {source}")]
    Phase {
        phase: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI for its one-line
    /// error output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Decode(_) => "decode",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::DegenerateMesh(_) => "degenerate-mesh",
            Error::NoPseudoLabels(_) => "no-pseudo-labels",
            Error::Config(_) => "config",
            Error::OutputExists(_) => "output-exists",
            Error::Phase { source, .. } => source.category(),
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
