use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate document id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("document {id:?} at line {line} has no label but labels are required")]
    MissingLabel { id: String, line: usize },

    #[error("dictionary is empty")]
    EmptyDictionary,

    #[error("dictionary line {line}: {word:?} contains non-alphabetic characters")]
    InvalidWord { line: usize, word: String },

    #[error("data contains a single class ({cyber} cyber, {noncyber} noncyber); both classes are required")]
    SingleClass { cyber: usize, noncyber: usize },

    #[error("stratified split needs at least 2 documents per class ({cyber} cyber, {noncyber} noncyber)")]
    TooFewPerClass { cyber: usize, noncyber: usize },

    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("training did not reach accuracy {threshold} within {epochs} epochs (best {best_accuracy:.4})")]
    NotConverged {
        threshold: f64,
        epochs: usize,
        best_accuracy: f64,
    },

    #[error("training diverged: non-finite activations")]
    Diverged,

    #[error("model {0} has no continuous output")]
    NoContinuousOutput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic bytes {0:?}, not a model container")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated container: {0}")]
    Truncated(String),

    #[error("container integrity check failed: {0}")]
    Integrity(String),

    #[error("content hash mismatch for {path}: expected {expected}, found {actual}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("referenced file does not exist: {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad input data or a corrupt artifact, as
    /// opposed to an invalid request.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_))
    }
}
