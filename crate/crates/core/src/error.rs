use thiserror::Error;

/// Errors surfaced by model construction, conditioning and the experiment
/// drivers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("history is empty; an incumbent requires at least one observation")]
    EmptyHistory,

    /// The history Gram matrix could not be factorized even after the maximal
    /// jitter escalation. `entries` lists index pairs of noiseless history
    /// locations that coincide but disagree on the observed value.
    #[error("singular model: history Gram matrix is not factorizable ({detail}); offending history entries: {entries:?}")]
    SingularModel {
        detail: String,
        entries: Vec<(usize, usize)>,
    },

    #[error("selection rule returned the off-grid point {point:?}")]
    OffGridSelection { point: Vec<f64> },

    #[error("replay diverged at step {step} in field `{field}`")]
    ReplayDivergence { step: usize, field: String },

    #[error("verification inconclusive: {0}")]
    Inconclusive(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
