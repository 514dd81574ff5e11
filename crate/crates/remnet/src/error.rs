use std::path::{Path, PathBuf};

pub type IoResult<T> = std::result::Result<T, IoError>;

/// Failures of the IO layer. Each variant maps to its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Schema { path: PathBuf, line: usize, msg: String },
    #[error("{path}: bad checkpoint: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error(transparent)]
    Core(#[from] remnet_core::Error),
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn image(path: &Path, e: image::ImageError) -> Self {
        match e {
            image::ImageError::IoError(source) => Self::Io { path: path.into(), source },
            other => Self::Image {
                path: path.into(),
                msg: other.to_string(),
            },
        }
    }

    pub fn schema(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Self::Schema {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn checkpoint(path: &Path, msg: impl Into<String>) -> Self {
        Self::Checkpoint {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Stable short tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => "missing_file",
            Self::Io { .. } => "io",
            Self::Image { .. } => "image",
            Self::Schema { .. } => "schema",
            Self::Checkpoint { .. } => "checkpoint",
            Self::Constraint(_) => "constraint",
            Self::Core(_) => "compute",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "missing_file" => 3,
            "io" => 4,
            "image" => 5,
            "schema" => 6,
            "checkpoint" => 7,
            "constraint" => 8,
            _ => 9,
        }
    }
}
