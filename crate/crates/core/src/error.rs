use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid action {action} (world has {available} actions)")]
    InvalidAction { action: usize, available: usize },

    #[error("episode horizon {0} exceeded")]
    HorizonExceeded(usize),

    #[error("rule graph contains a cycle through `{0}`")]
    CyclicRules(String),

    #[error("accepted causal graph contains a cycle through variable {0}")]
    CyclicGraph(usize),

    #[error("no data: {0}")]
    EmptyData(String),

    #[error("no structural model for lag {0}")]
    MissingLag(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("toml: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
