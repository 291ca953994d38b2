use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("detection failed: {0}")]
    DetectionFailed(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("stage `{stage}`{}: {source}", sample.as_ref().map(|s| format!(" (sample {s})")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        sample: Option<String>,
        #[source]
        source: Box<Error>,
    },
}

/// Process exit categories used by the command-line front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Validation = 2,
    Io = 3,
    Numerical = 4,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn in_stage(self, stage: &'static str, sample: Option<&str>) -> Self {
        Error::Stage {
            stage,
            sample: sample.map(str::to_owned),
            source: Box::new(self),
        }
    }

    pub fn exit_class(&self) -> ExitClass {
        match self {
            Error::Io { .. } | Error::Image { .. } => ExitClass::Io,
            Error::Degenerate(_) | Error::Numerical(_) | Error::DetectionFailed(_) => ExitClass::Numerical,
            Error::Stage { source, .. } => source.exit_class(),
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Shape(_)
            | Error::Domain(_)
            | Error::Index(_) => ExitClass::Validation,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            message: e.to_string(),
        }
    }
}
