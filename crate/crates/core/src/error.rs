use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The diffusion matrix itself is degenerate on the probe ball. All
    /// degeneracy has to be carried by the inverse weight.
    #[error("diffusion matrix is degenerate on the probe ball (min Rayleigh quotient {0:e})")]
    DegenerateMatrix(f64),

    #[error("point lies in the degeneracy set; the condition holds a.e., probe elsewhere")]
    NullSetPoint,

    #[error("density sign change (min {min:e}): enlarge box or refine grid")]
    DensitySignChange { min: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("linear solve failed at row {row}: pivot {pivot:e}")]
    SolveFailed { row: usize, pivot: f64 },

    #[error("test function support touches the box boundary")]
    SupportTouchesBoundary,

    #[error("trivial window: denominator norm {0:e} below 1e-14")]
    TrivialWindow(f64),

    #[error("function is unbounded on the window: {0}")]
    Unbounded(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
