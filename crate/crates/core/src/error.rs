use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("class has no samples: {0}")]
    EmptyClass(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite feature value at vector {index}")]
    NonFinite { index: usize },

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error("degenerate class centers")]
    DegenerateCenters,

    #[error("insufficient samples for covariance (class {class} has {count}, need at least 2)")]
    InsufficientSamples { class: usize, count: usize },

    #[error("probability must lie in (0, 1), got {0}")]
    InvalidProbability(f64),

    #[error("standard deviation must be positive, got {0}")]
    InvalidSigma(f64),

    #[error("analytic path requires two classes, got {0}")]
    NotBinary(usize),

    #[error("invalid distance matrix: {0}")]
    InvalidDistanceMatrix(String),

    #[error("covariance matrix is not positive semi-definite (min eigenvalue {0:e})")]
    NonPsdCovariance(f64),

    #[error("singular covariance matrix")]
    SingularCovariance,

    #[error("oracle limited to 2-D, got {0} dimensions")]
    OracleDimension(usize),

    #[error("cross-validation undefined for 1-shot")]
    CrossValidationOneShot,

    #[error("degenerate DB denominator")]
    DegenerateDbDenominator,

    #[error("calibration needs at least two points with non-constant DB scores")]
    DegenerateCalibration,

    #[error("undefined MAPE at zero accuracy")]
    UndefinedMape,

    #[error("degenerate ROC: truths contain a single class")]
    DegenerateRoc,

    #[error("reference pool too small: class {class} has {count} samples, need {needed}")]
    PoolTooSmall { class: usize, count: usize, needed: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::DegenerateCenters
                | Error::NonPsdCovariance(_)
                | Error::SingularCovariance
                | Error::DegenerateDbDenominator
                | Error::DegenerateCalibration
                | Error::UndefinedMape
                | Error::DegenerateRoc
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
