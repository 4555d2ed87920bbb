use std::path::PathBuf;

/// Errors produced anywhere in the suite.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("episode already finished at step {step}")]
    EpisodeFinished { step: usize },

    #[error("invalid transition pair: {0}")]
    InvalidPair(String),

    #[error("dataset has no actions; behavioral cloning needs state-action pairs")]
    MissingActions,

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error in {source_name} line {line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(source_name: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
