use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad weights, thresholds, cost ordering, unknown dialect.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("store is locked by another writer ({})", .0.display())]
    Lock(PathBuf),

    #[error("integrity error in {} at line {line}: {message}", path.display())]
    Integrity {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("ingest error at line {line}: {message}")]
    Ingest { line: usize, message: String },

    #[error("routing error: {0}")]
    Routing(String),

    #[error("training error for tier {tier}: {message}")]
    Training { tier: String, message: String },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
