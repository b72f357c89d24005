use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate dimension {dim}: zero standard deviation")]
    DegenerateDimension { dim: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("sample {index} is marked unlabeled (lambda = 1) but carries no weight vector")]
    MissingWeights { index: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("clustering produced no clusters (every sample is noise)")]
    EmptyClustering,

    #[error("target-train sample {sample_id} exposes a ground-truth identity")]
    LabelLeak { sample_id: u64 },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
