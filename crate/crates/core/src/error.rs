use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OryxError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OryxError {
    /// A caller broke an operation's precondition (shapes, ranges, ordering).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared during evaluation.
    #[error("non-finite value produced at node `{node}`")]
    Numeric { node: String },

    /// A runtime invariant check failed.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("bad magic bytes in {0}")]
    BadMagic(PathBuf),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },

    #[error("float precision mismatch: file stores {found}, this build reads {expected}")]
    Precision { found: String, expected: String },

    #[error("file truncated: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl OryxError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        OryxError::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OryxError::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::OryxError::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
