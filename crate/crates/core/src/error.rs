use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid config key `{0}`")]
    UnknownKey(String),

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("state error: {0}")]
    State(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("variant error: {0}")]
    Variant(String),

    #[error("non-finite gradient in `{0}`")]
    NonFinite(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownKey(_) | Error::Variant(_) => 2,
            Error::MissingColumn(_)
            | Error::Row { .. }
            | Error::Data(_)
            | Error::Lookup(_)
            | Error::Io { .. } => 3,
            Error::Checkpoint(_) => 4,
            Error::Metric(_) => 5,
            Error::Shape(_) | Error::State(_) | Error::NonFinite(_) | Error::Precondition(_) => 6,
        }
    }
}
