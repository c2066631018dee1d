use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] bplab_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("spec hash mismatch: expected {expected}, found {found}")]
    SpecMismatch { expected: String, found: String },
    #[error("{flag}: {message}")]
    Usage { flag: String, message: String },
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        LabError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn usage(flag: &str, message: impl Into<String>) -> Self {
        LabError::Usage {
            flag: flag.to_string(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LabError::Core(_) => "compute",
            LabError::Io { .. } => "io",
            LabError::Format { .. } => "format",
            LabError::Json { .. } => "json",
            LabError::SpecMismatch { .. } => "spec_mismatch",
            LabError::Usage { .. } => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Usage { .. } => 2,
            _ => 1,
        }
    }

    /// Single-line JSON description for stderr.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            flag: Option<&'a str>,
            message: String,
        }
        let flag = match self {
            LabError::Usage { flag, .. } => Some(flag.as_str()),
            _ => None,
        };
        serde_json::to_string(&Line {
            error: self.kind(),
            flag,
            message: self.to_string(),
        })
        .expect("plain strings serialize")
    }
}
