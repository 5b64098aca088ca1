use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid range {lo}..{hi} for dimension {dim}")]
    Range { lo: usize, hi: usize, dim: usize },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("incompatible distributions: {0}")]
    Incompatible(String),

    #[error("absolute continuity violated at coordinate {coordinate}: q > 0 where p = 0")]
    AbsoluteContinuity { coordinate: usize },

    /// Every shared sample of a block has zero mass under `q`.
    #[error(
        "no sample in q's support among the {samples} drawn for the block at coordinate {start}; raise overhead_r"
    )]
    EmptySupport { start: usize, samples: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range for block {block} with K = {k}")]
    IndexOutOfRange { block: usize, index: u64, k: u64 },

    #[error("malformed message at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Data { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    /// True for errors caused by the user's configuration or inputs rather
    /// than by a failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Io { .. } | Error::Data { .. })
    }
}
