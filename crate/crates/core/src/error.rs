use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state is not normalized (trace or norm {0:.3e} away from 1)")]
    NotNormalized(f64),

    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("empty factor set for partial trace")]
    EmptyKeep,

    #[error("step size violation: {0}")]
    StepSize(String),

    #[error("timing violation: {0}")]
    Timing(String),

    #[error("invalid sequence: {0}")]
    Sequence(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("empty scan grid")]
    EmptyGrid,

    #[error("both photon modes excited (weight {0:.3e})")]
    DoubleExcitation(f64),

    #[error("zero runs")]
    ZeroRuns,

    #[error("normalizer eta must be positive, got {0}")]
    BadEta(f64),

    #[error("all-zero coincidence table")]
    EmptyTable,

    #[error("zero singles probability for {0}")]
    ZeroSingles(String),

    #[error("fit needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
