use thiserror::Error;

/// Errors raised by kernel construction, intensity queries, simulation and
/// the exact small-system checks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not Hermitian: max |A - A*| = {deviation:e} exceeds {tolerance:e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("matrix is not positive definite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("restriction I - K_Λ is numerically singular (condition number {condition:e})")]
    SingularRestriction { condition: f64 },

    #[error("site {0} is already occupied")]
    SiteOccupied(usize),

    #[error("site {0} is empty")]
    SiteEmpty(usize),

    #[error("site {site} out of range for {n_sites} sites")]
    SiteOutOfRange { site: usize, n_sites: usize },

    #[error("sites {0} and {0} must be distinct")]
    IdenticalSites(usize),

    #[error("duplicate site {0} in site list")]
    DuplicateSites(usize),

    #[error("Schur complement {value:e} is numerically singular")]
    NumericallySingular { value: f64 },

    #[error("refactorization failed: {0}")]
    RefactorizationFailure(String),

    #[error(
        "intensity bound violated at site {site} with configuration {configuration:?}: {detail}"
    )]
    BoundViolated {
        site: usize,
        configuration: Vec<usize>,
        detail: String,
    },

    #[error("configuration is not contained in the window")]
    ConfigurationNotInWindow,

    #[error("window of {size} sites exceeds the exact-mode limit of {limit}")]
    WindowTooLarge { size: usize, limit: usize },

    #[error("enumeration over {n_sites} sites exceeds the limit of {limit}")]
    EnumerationTooLarge { n_sites: usize, limit: usize },

    #[error("{n_sites} sites exceed the generator limit of {limit}")]
    TooManySites { n_sites: usize, limit: usize },

    #[error("non-finite rate {value} encountered")]
    RateOverflow { value: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("generator is not reversible: detailed-balance residual {residual:e}")]
    NotReversible { residual: f64 },

    #[error("assumption of diagonal dominance violated: margin {lambda}")]
    AssumptionAViolated { lambda: f64 },

    #[error("kernel is already real")]
    AlreadyReal,

    #[error("invalid value for {field}: {message}")]
    Validation { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
