use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: expected {expected} samples, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("frequency grids of the two sweeps differ")]
    GridMismatch,

    #[error("no peak: impulse response is identically zero")]
    NoPeak,

    #[error("degenerate background: impulse response peak is zero")]
    DegenerateBackground,

    #[error("sample set is empty")]
    EmptySampleSet,

    #[error("sample index {index} outside 0..{n}")]
    SampleOutOfRange { index: usize, n: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("{}: line {line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: row count mismatch: expected {expected}, found {actual}", path.display())]
    RowCount {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{}: line {line}: grid violation: {msg}", path.display())]
    GridViolation {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input content rather than the filesystem.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
