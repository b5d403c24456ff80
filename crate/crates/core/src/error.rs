use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed npy data: {0}")]
    Npy(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("class {0} has no samples (class ids must be dense 0..C-1)")]
    MissingClass(usize),

    #[error("negative label {0}")]
    NegativeLabel(i64),

    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("feature matrix has zero variance in every column")]
    ZeroVariance,

    #[error("kernel matrix is not symmetric (max deviation {0:e})")]
    Asymmetric(f64),

    #[error("svm training needs both classes present")]
    SingleClass,

    #[error("layer {layer} of model {model}: {source}")]
    Layer {
        model: String,
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
