use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A ciphertext-ciphertext (or level-consuming plaintext) multiplication
    /// was attempted at level 0. `stage` names the pipeline stage that owned
    /// the offending node when known.
    #[error("multiplicative depth exhausted{}", stage.as_ref().map(|s| format!(" in stage `{s}`")).unwrap_or_default())]
    DepthExhausted { stage: Option<String> },

    #[error("invalid simulator parameters: {0}")]
    InvalidParams(String),

    #[error("denominator sign is unknown and sign resolution is disabled ({site})")]
    SignUnresolvable { site: &'static str },

    #[error("no assignment for residual parameter {0}")]
    MissingAssignment(String),

    #[error("kernel input is empty")]
    EmptyInput,

    #[error("deferred execution unsupported: {0}")]
    DeferralUnsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("wire format error: {0}")]
    Wire(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn with_stage(self, stage: &str) -> Self {
        match self {
            Error::DepthExhausted { stage: None } => Error::DepthExhausted {
                stage: Some(stage.to_string()),
            },
            other => other,
        }
    }
}
