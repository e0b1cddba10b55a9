use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no data rows")]
    NoData,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {message}")]
    BadCell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("row {row}: treatment value `{value}` is not 0 or 1")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("no variation in treatment")]
    NoTreatmentVariation,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected} covariates, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("trimming would remove every {0} unit")]
    TrimRemovesArm(&'static str),

    #[error("propensity score {0} is not strictly inside (0, 1)")]
    DegenerateScore(f64),

    #[error("missing ground truth")]
    MissingGroundTruth,

    #[error("weak instrument: first stage {0:.4} below 0.01 in magnitude")]
    WeakInstrument(f64),

    #[error("single-arm instrument")]
    SingleArmInstrument,

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for errors caused by the user's configuration rather than by a
    /// failing computation.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidParameter(_) | Error::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
