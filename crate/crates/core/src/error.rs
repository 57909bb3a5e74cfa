use thiserror::Error;

/// Crate-wide error type. Every variant carries a short stable kind string
/// (see [`Error::kind`]) so the CLI can emit machine-parseable one-liners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("token: {0}")]
    Token(String),
    #[error("manifest {path}:{line}: {msg}")]
    Manifest {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("audio: {0}")]
    Audio(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("tokenizer: {0}")]
    Tokenizer(String),
    #[error("request: {0}")]
    Request(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable kind for structured error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schedule(_) => "schedule",
            Error::DegeneratePosterior(_) => "degenerate_posterior",
            Error::Shape(_) => "shape",
            Error::Token(_) => "token",
            Error::Manifest { .. } => "manifest",
            Error::Audio(_) => "audio",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Tokenizer(_) => "tokenizer",
            Error::Request(_) => "request",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
