use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {0} is not present at day {1}")]
    NotPresent(String, i64),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("edge ({player}, {game}) does not exist at day {day}")]
    NoEdge { player: u32, game: u32, day: i64 },

    #[error("day {0} is outside the observed range")]
    OutOfRange(i64),

    #[error("random walk reached a dead end at {0}")]
    DeadEnd(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("vocabulary index {index} out of range (size {size})")]
    Vocab { index: usize, size: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty input")]
    EmptyInput,

    #[error("data error: {0}")]
    Data(String),

    #[error("metric is undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse { path: path.into(), message: message.to_string() }
    }
}
