//! Crate-wide error type, categorized to match the CLI exit-code taxonomy
//! (config = 2, data = 3, backend = 4).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad parameter or option value (epsilon out of range, samples too
    /// small, malformed plan strings, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid multiplayer game outcome fed to the rating update.
    #[error("invalid outcome: {0}")]
    InvalidOutcome(String),

    /// Input data problems: missing files, referential breaks, domain
    /// violations in loaded structures.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed line in a TREC run/qrels or JSONL file.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    /// Metric evaluation contract violations (unknown query, length
    /// mismatch, too few scores).
    #[error("evaluation error: {0}")]
    Eval(String),

    /// Transport-level reranker failure (timeout, non-2xx, connection).
    #[error("backend transport error: {0}")]
    Transport(String),

    /// The reranker answered but its output could not be turned into a
    /// permutation even after repair. Carries the raw response for logging.
    #[error("reranker output error: {message}")]
    RerankerOutput {
        message: String,
        raw: Option<String>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidOutcome(_) => 2,
            Error::Data(_) | Error::Parse { .. } | Error::Eval(_) | Error::Io(_) => 3,
            Error::Transport(_) | Error::RerankerOutput { .. } => 4,
        }
    }
}
