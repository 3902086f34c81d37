use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible grids: {left_w}x{left_h} vs {right_w}x{right_h}")]
    IncompatibleGrids {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("track alignment error: {0}")]
    Alignment(String),

    #[error("no ground truth for ped_ids {0:?}")]
    MissingCounterpart(Vec<i64>),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checkpoint tensor `{name}` has shape {found:?}, config declares {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-finite parameter after optimizer step")]
    NonFinite,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn grids(left: (usize, usize), right: (usize, usize)) -> Self {
        Error::IncompatibleGrids {
            left_w: left.0,
            left_h: left.1,
            right_w: right.0,
            right_h: right.1,
        }
    }
}
