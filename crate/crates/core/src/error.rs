use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to load {path}: row {row}: {message}")]
    Load {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("simulation error: {0}")]
    Sim(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("gradient error: {0}")]
    Backward(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Load { .. } => "load",
            Error::Sim(_) => "simulation",
            Error::Shape(_) => "shape",
            Error::Backward(_) => "backward",
            Error::Config(_) => "config",
            Error::Training(_) => "training",
            Error::Metrics(_) => "metrics",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
