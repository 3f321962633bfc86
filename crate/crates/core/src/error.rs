use thiserror::Error;

/// Errors surfaced by the lab's kernels and runners.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or incompatible shapes detected before any compute.
    #[error("configuration error: {0}")]
    Config(String),

    /// A training run produced a non-finite loss or gradient.
    #[error("run error: {0}")]
    Run(String),

    /// Pretraining finished but the extractor failed its decodability checks.
    #[error("pretraining error: {0}")]
    Pretrain(String),

    /// A metric was asked to evaluate degenerate or missing inputs.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Checkpoint or dataset file could not be read or parsed.
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn run(msg: impl Into<String>) -> Self {
        Error::Run(msg.into())
    }

    pub fn eval(msg: impl Into<String>) -> Self {
        Error::Eval(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
