use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vocabulary mismatch: expected `{expected}`, got `{found}`")]
    VocabMismatch { expected: String, found: String },

    #[error("unparseable prompt: {0}")]
    UnparseablePrompt(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("provider has no tokenizer; candidates must be token ids")]
    NoTokenizer,

    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    /// Error object returned by the server, passed through verbatim.
    #[error("server error [{code}]: {message}")]
    Server { code: String, message: String },

    #[error("dataset line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("cannot resolve image `{path}`: {message}")]
    ImageReference { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
