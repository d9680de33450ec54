use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FunnelError>;

#[derive(Debug, Error)]
pub enum FunnelError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("conditioning event has vanishing probability ({probability:e})")]
    ConditioningDegenerate { probability: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("feature `{feature}` required at stage {stage} is absent")]
    MissingFeature { feature: String, stage: usize },

    #[error("data error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("format mismatch: expected {expected} version {expected_version}, found {found}")]
    VersionMismatch {
        expected: String,
        expected_version: u32,
        found: String,
    },

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("sampler failure: {message}")]
    SamplerFailure { message: String, divergences: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("parameter names do not match: {0}")]
    NameMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FunnelError {
    pub(crate) fn data(message: impl Into<String>) -> Self {
        FunnelError::Data {
            row: None,
            message: message.into(),
        }
    }

    pub(crate) fn data_at(row: usize, message: impl Into<String>) -> Self {
        FunnelError::Data {
            row: Some(row),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FunnelError::Io {
            path: path.into(),
            source,
        }
    }
}
