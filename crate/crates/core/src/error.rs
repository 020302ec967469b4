use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grad(#[from] gradcore::GradError),
    #[error("{path}: {message}")]
    Data { path: String, message: String },
    #[error("invalid split: {0}")]
    Split(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("sample index {index} out of range for {len} unlabeled samples")]
    SampleIndex { index: usize, len: usize },
    #[error("accounting: {0}")]
    Accounting(String),
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("evaluation failed: {0}")]
    Eval(String),
    #[error("federated: {0}")]
    Federated(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
