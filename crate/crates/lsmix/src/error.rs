//! Error type shared across the pipeline.

use std::path::PathBuf;

use crate::client::ClientError;
use crate::corpus::ChainKind;
use crate::mixture::ThinkingMode;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, LsMixError>;

#[derive(Debug, thiserror::Error)]
pub enum LsMixError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: malformed JSON record: {source}")]
    Jsonl {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    /// A record that parsed as JSON but violates the corpus contract
    /// (duplicate id, empty required field, stray think tags, ...).
    #[error("{path}: line {line}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("expected a {expected:?}-chain dataset, got {actual:?}")]
    KindMismatch { expected: ChainKind, actual: ChainKind },

    #[error("thinking mode {mode:?} cannot be paired with a {kind:?} chain")]
    ModeKindMismatch { mode: ThinkingMode, kind: ChainKind },

    #[error("id mismatch: long-chain record {long} paired with short-chain record {short}")]
    IdMismatch { long: String, short: String },

    #[error("no long-chain counterpart for id {0}")]
    MissingCounterpart(String),

    #[error("cannot compute a compression ratio against an empty long trajectory (id {0})")]
    EmptyLongTrajectory(String),

    #[error("missing logprobs for record ({id}, {mode:?})")]
    MissingLogprobs { id: String, mode: ThinkingMode },

    #[error("record {id} carries an invalid logprob {value} (must be finite and <= 0)")]
    InvalidLogprob { id: String, value: f64 },

    #[error("chat endpoint error: {0}")]
    Client(#[from] ClientError),

    /// A pipeline stage completed its bookkeeping but did not achieve its
    /// goal (e.g. strict validation rejected pairs). Exit code 1.
    #[error("{0}")]
    Stage(String),
}

impl LsMixError {
    /// Wrap an i/o error with the path it happened on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LsMixError::Io { path: path.into(), source }
    }

    /// Process exit code for this error, per the CLI contract:
    /// 2 config, 3 i/o and malformed inputs, 4 upstream endpoint exhaustion.
    pub fn exit_code(&self) -> i32 {
        match self {
            LsMixError::Config(_) => 2,
            LsMixError::Io { .. } | LsMixError::Jsonl { .. } | LsMixError::Record { .. } => 3,
            LsMixError::Client(_) => 4,
            _ => 1,
        }
    }
}
