use thiserror::Error;

use crate::bagnet::TrainHistory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient data: need {needed}, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid bag: {0}")]
    InvalidBag(String),

    #[error("invalid label {label} for head with {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged {
        epoch: usize,
        history: Box<TrainHistory>,
    },

    #[error("head mismatch: expected {expected}, found {found}")]
    HeadMismatch { expected: String, found: String },

    #[error("need at least 3 points inside the fit window, found {0}")]
    InsufficientPoints(usize),

    #[error("non-convex parabola fit (curvature {0})")]
    NonConvexFit(f64),

    #[error("zero variance: information is infinite")]
    InfiniteInformation,

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("heterogeneous ensemble: {0}")]
    HeterogeneousEnsemble(String),

    #[error("index {index} out of range for {len} classes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("schema version mismatch: expected {expected}, found {found}")]
    SchemaVersion { expected: u32, found: u32 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid_param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
