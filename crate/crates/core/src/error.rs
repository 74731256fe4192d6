use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("class `{0}` has no template")]
    MissingTemplate(String),

    #[error("support set is missing class `{0}`")]
    MissingSupportClass(String),

    #[error("train and test class sets overlap in one-shot protocol: {0:?}")]
    ClassOverlap(Vec<usize>),

    #[error("classifier has not been trained for inference")]
    UntrainedClassifier,

    #[error("training diverged at epoch {epoch}: {what} became non-finite")]
    Diverged { epoch: usize, what: String },

    #[error("malformed repository file at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
