use std::path::PathBuf;

/// Errors raised anywhere in the detector stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, hyperparameters or user-supplied settings that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),
    /// A value went NaN/Inf.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Caller violated a documented precondition (degenerate box, empty anchor set, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    /// Process exit code: 1 for user/config problems, 2 for runtime/numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::Eval(_) => 2,
            _ => 1,
        }
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
pub(crate) use config_err;
