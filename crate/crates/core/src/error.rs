use std::path::PathBuf;

/// Errors produced anywhere in the optimizer pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("decision vector component {index} = {value} lies outside [{lower}, {upper}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("problem `{0}` has no reference front")]
    NoReferenceFront(String),
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
    #[error("computation graph already consumed by a backward pass; call reset first")]
    GraphConsumed,
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("replay buffer holds {have} transitions, need {need}")]
    BufferUnderfull { have: usize, need: usize },
    #[error("reward undefined: previous IGD exists but current IGD is absent")]
    IgdVanished,
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
