use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal is empty")]
    EmptySignal,

    #[error("sample rate must be positive, got {0}")]
    BadSampleRate(u32),

    #[error("sequence too short: need at least {needed} frames, got {actual}")]
    SequenceTooShort { needed: usize, actual: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("training data contains a single class")]
    DegenerateLabels,

    #[error("score set has an empty {0} class")]
    EmptyClass(&'static str),

    #[error("invalid t-DCF costs: {0}")]
    BadCosts(String),

    #[error("need at least 3 client reports for screening, got {0}")]
    TooFewClients(usize),

    #[error("client {0} has an empty shard")]
    EmptyShard(usize),

    #[error("round aborted{}: no accepted client updates", round_suffix(*.0))]
    RoundAborted(Option<usize>),

    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedAudio { path: PathBuf, reason: String },

    #[error("malformed {kind} file {path}: {reason}")]
    Malformed {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

fn round_suffix(round: Option<usize>) -> String {
    round.map(|r| format!(" at round {r}")).unwrap_or_default()
}
