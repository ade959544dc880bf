use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("classes `{class_a}` and `{class_b}` are both positive at pixel ({row}, {col})")]
    OverlappingPositives {
        class_a: String,
        class_b: String,
        row: usize,
        col: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("invalid class catalog: {0}")]
    InvalidCatalog(String),

    #[error("manifest schema error: {0}")]
    SchemaError(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("data is not fully labeled: {0}")]
    NotFullyLabeled(String),

    #[error("configuration error: {0}")]
    ConfigError(String),

    #[error("split `{0}` contains no frames")]
    EmptySplit(String),

    #[error("class `{0}` has no positive pixels in the training split")]
    NoPositives(String),

    #[error("no subset annotates exactly class `{0}`")]
    MissingSubset(String),

    #[error("incomplete ensemble bundle: {0}")]
    IncompleteBundle(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint was written for a different class catalog")]
    CatalogMismatch,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("too few non-zero paired differences for a signed-rank test: {0} (need at least 5)")]
    TooFewPairs(usize),

    #[error("non-finite training loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

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
}
