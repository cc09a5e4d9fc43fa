use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("fit degenerate: {0}")]
    FitDegenerate(String),
    #[error("resolution failure after {successes} successful fits: {msg}")]
    Resolution { successes: usize, msg: String },
    #[error("calibration failure: {0}")]
    Calibration(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code associated with this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config { .. } | Error::Io { .. } => 2,
            Error::Numerical(_) | Error::FitDegenerate(_) => 3,
            Error::Resolution { .. } | Error::Calibration(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
