//! Crate-wide error type. Internal contract violations (shape mismatches,
//! stale caches) panic; everything user-facing or recoverable flows through
//! `Error` so the CLI can map variants onto exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Structurally valid input violating a data-model invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Caller-supplied argument outside its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numeric check failed or an objective became non-finite.
    #[error("numeric check failed: {0}")]
    Numeric(String),

    /// Checkpoint file unreadable, corrupt, or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
