use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("row {row}: expected {expected} values, found {found}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },

    #[error("row {row}, column {column}: non-finite value")]
    NonFinite { row: usize, column: usize },

    #[error("row {row}: label {label} out of range for {class_count} classes")]
    LabelOutOfRange { row: usize, label: u64, class_count: usize },

    #[error("row {row}: zero-norm vector cannot be normalized")]
    ZeroNorm { row: usize },

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("vector is not unit-norm (norm {norm})")]
    NotUnitNorm { norm: f64 },

    #[error("store is empty")]
    EmptyStore,

    #[error("exclude index {index} out of range for store of {len} rows")]
    ExcludeOutOfRange { index: usize, len: usize },

    #[error("no neighbors retrieved")]
    EmptyNeighbors,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("example {index}: non-finite intermediate value")]
    NonFiniteExample { index: usize },

    #[error("optimizer already reached its step budget ({0} steps)")]
    StepBudgetExhausted(u64),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the content of input files or vectors.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MalformedHeader(_)
                | Error::MalformedRow { .. }
                | Error::DimensionMismatch { .. }
                | Error::NonFinite { .. }
                | Error::LabelOutOfRange { .. }
                | Error::ZeroNorm { .. }
                | Error::BadMagic { .. }
                | Error::UnsupportedVersion(_)
                | Error::Truncated { .. }
                | Error::Json(_)
        )
    }
}
