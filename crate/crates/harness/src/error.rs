use thiserror::Error;

/// Harness failures, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad configuration, with the offending field and, for config files,
    /// the line it came from.
    #[error("config error in `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config {
        field: String,
        line: Option<usize>,
        message: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed data in {path}: {message}")]
    Data { path: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(#[from] firal_core::Error),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl HarnessError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            line: None,
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn data(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Self::Data {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    /// 1 for configuration and input problems, 2 for numerical failures,
    /// 3 for failed verification. Core input-validation errors count as
    /// configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Usage(_) | Self::Io { .. } | Self::Data { .. } => 1,
            Self::Numerical(firal_core::Error::InvalidInput(_)) => 1,
            Self::Numerical(_) => 2,
            Self::Verification(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
