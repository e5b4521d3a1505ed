use thiserror::Error;

/// Errors surfaced by the toolkit.
///
/// Pipeline commands map these onto process exit codes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("hash mismatch for artifact {0}")]
    HashMismatch(String),

    #[error("stage order violation: {0}")]
    StageOrder(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 2 config, 3 missing/corrupt artifact, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Json(_) => 2,
            Error::MissingArtifact(_)
            | Error::HashMismatch(_)
            | Error::StageOrder(_)
            | Error::Format(_)
            | Error::Io(_) => 3,
            Error::NonFinite(_) | Error::Divergence { .. } | Error::SequenceTooLong { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
