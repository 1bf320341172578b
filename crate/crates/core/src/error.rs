use std::path::PathBuf;

/// Errors surfaced by loaders, model construction, and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: malformed record: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("{file}:{line}: validation failed [{rule}]: {msg}")]
    Validation {
        file: String,
        line: usize,
        rule: &'static str,
        msg: String,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown region id {0:?}")]
    UnknownRegion(String),

    #[error("unknown topic id {0:?}")]
    UnknownTopic(String),

    #[error("destination-topic labeled data leaked into {context}: topic {topic:?}")]
    Leakage { context: String, topic: String },

    #[error("non-finite loss at epoch {epoch}, step {step}: L_sc={l_sc}, L_td={l_td}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        l_sc: f64,
        l_td: f64,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
