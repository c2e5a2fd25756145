use thiserror::Error;

/// Errors raised by the memory engine and its supporting IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("pooling not exact: target grid {target} does not divide grid {grid}")]
    PoolingNotExact { grid: usize, target: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },

    #[error("k-means: {0}")]
    Clustering(String),

    #[error("memory still warming up: {0}")]
    WarmUp(&'static str),

    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),

    #[error("truncated header: {got} of {need} bytes")]
    TruncatedHeader { got: usize, need: usize },

    #[error("truncated frame {frame}: stream ended at byte offset {offset} inside frame starting at {frame_start}")]
    TruncatedFrame {
        frame: u64,
        frame_start: u64,
        offset: u64,
    },

    #[error("non-finite value in frame {frame} at byte offset {offset}")]
    NonFiniteInStream { frame: u64, offset: u64 },

    #[error("invalid grid spec: {0}")]
    GridSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
