use std::path::PathBuf;

/// Errors raised by file handling and the commands.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Structured-text file that does not match its schema.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("entry `{id}`: file {path} not found")]
    MissingFile { id: String, path: PathBuf },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("model configuration fingerprint {found} does not match checkpoint fingerprint {expected}")]
    FingerprintMismatch { expected: String, found: String },
    #[error(transparent)]
    Core(#[from] cardioseg_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag printed in diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Parse { .. } => "E_PARSE",
            Error::MissingFile { .. } => "E_MISSING_FILE",
            Error::Image { .. } => "E_IMAGE",
            Error::Config(_) => "E_CONFIG",
            Error::Checkpoint { .. } => "E_CHECKPOINT",
            Error::FingerprintMismatch { .. } => "E_FINGERPRINT",
            Error::Core(cardioseg_core::Error::Config(_)) => "E_CONFIG",
            Error::Core(cardioseg_core::Error::NonFinite { .. }) => "E_NON_FINITE",
            Error::Core(_) => "E_DATA",
        }
    }

    /// Process exit status; see the binary's `--help`.
    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "E_CONFIG" | "E_PARSE" => 3,
            "E_IO" | "E_MISSING_FILE" | "E_IMAGE" => 4,
            "E_CHECKPOINT" | "E_FINGERPRINT" => 5,
            "E_NON_FINITE" => 6,
            _ => 7,
        }
    }
}
