use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite sample on channel {channel} at index {index}")]
    NonFinite { channel: usize, index: usize },

    #[error("zero-norm vector has no cosine similarity")]
    ZeroNorm,

    #[error("associative memory is empty")]
    EmptyMemory,

    #[error("training data lacks gestures: {}", .0.join(", "))]
    MissingLabels(Vec<String>),

    #[error("checksum mismatch for {path}: manifest says {expected}, payload hashes to {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown gesture label `{0}`")]
    UnknownLabel(String),

    #[error(
        "overlapping segments: [{first_start}, {first_end}) and [{second_start}, {second_end})"
    )]
    OverlappingSegments {
        first_start: usize,
        first_end: usize,
        second_start: usize,
        second_end: usize,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("import: {0}")]
    Import(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable category, used by the CLI for its exit status.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::DimensionMismatch { .. } | Error::InvalidInput(_) | Error::NonFinite { .. } => {
                "input"
            }
            Error::ZeroNorm | Error::EmptyMemory => "model",
            Error::MissingLabels(_) => "data",
            Error::Checksum { .. } => "checksum",
            Error::Shape(_) => "shape",
            Error::UnknownLabel(_) => "label",
            Error::OverlappingSegments { .. } => "segments",
            Error::Format { .. } => "format",
            Error::Import(_) => "import",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
