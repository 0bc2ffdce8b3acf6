use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RfdmError>;

#[derive(Debug, Error)]
pub enum RfdmError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error in `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("sampling failed at frame {frame}, step {step}: {msg}")]
    Sampling { frame: usize, step: usize, msg: String },

    #[error("missing forward cache: {0}")]
    MissingCache(String),

    #[error("checkpoint config hash {found} does not match run config hash {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("missing results for {} clip(s): {}", .0.len(), .0.join(", "))]
    MissingResults(Vec<String>),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl RfdmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RfdmError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        RfdmError::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        RfdmError::Format {
            offset,
            msg: msg.into(),
        }
    }
}
