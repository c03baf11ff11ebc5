use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expert {index} is not eligible for the current canvas")]
    IneligibleExpert { index: usize },

    #[error("action {action} is masked out in the current state")]
    IneligibleAction { action: usize },

    #[error("expert index {0} is already registered")]
    DuplicateIndex(usize),

    #[error("no expert registered at index {0}")]
    UnknownExpert(usize),

    #[error("remote adapter failed: {0}")]
    RemoteFailure(String),

    #[error("step called on a finished episode")]
    SteppedAfterDone,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("action mask has no legal entry")]
    EmptyMask,

    #[error("replay buffer holds {len} transitions, sampling needs {required}")]
    BufferTooSmall { len: usize, required: usize },

    #[error("non-finite value detected: {0}")]
    NonFinite(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("checkpoint is corrupt (checksum or length mismatch)")]
    CorruptChecksum,

    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("all paired differences are zero")]
    AllZeroDifferences,

    #[error("empty input list")]
    EmptyList,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Validation failures map to CLI exit code 2, everything else to 3.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::Domain(_)
        )
    }
}
