use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("sample size exceeds cloud size ({k} > {n})")]
    SampleTooLarge { k: usize, n: usize },

    #[error("batch norm requires ≥ 2 points in train mode, got {0}")]
    BatchNormTooFewPoints(usize),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("encoder produced non-finite features")]
    NonFiniteFeatures,

    #[error("degenerate point feature at point {0}")]
    DegenerateFeature(usize),

    #[error("non-finite loss at point {0}")]
    NonFiniteLoss(usize),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {source}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("class `{0}` absent from training set; zero-shot classes must be excluded from the training label set")]
    AbsentClass(String),

    #[error("invalid embedding table: {0}")]
    Embeddings(String),

    #[error("label set mismatch: {0}")]
    LabelMismatch(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("empty shape: {0}")]
    EmptyShape(PathBuf),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("cannot build training split: {0}")]
    TrainingSplit(String),

    #[error("infeasible embedding plan: {0}")]
    Plan(String),

    #[error("empty evaluation: {0}")]
    EmptyEvaluation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient(_)
                | Error::NonFiniteFeatures
                | Error::DegenerateFeature(_)
                | Error::NonFiniteLoss(_)
                | Error::TrainingDiverged { .. }
        )
    }
}
