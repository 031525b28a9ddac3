use std::path::PathBuf;

/// Errors surfaced by the pipeline. The CLI maps these onto exit codes:
/// `Config` -> 2, `MissingCheckpoint`/`ChainMismatch` -> 3, everything
/// data-shaped -> 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing checkpoint for stage `{stage}`: {path}")]
    MissingCheckpoint { stage: String, path: PathBuf },

    #[error("checkpoint chain mismatch: {0}")]
    ChainMismatch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
