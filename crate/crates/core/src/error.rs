use thiserror::Error;

/// Every failure the library can report.
///
/// The CLI prints [`Error::name`] so scripts can match on a stable identifier
/// rather than the human-readable message.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("origin row is not a probability: {0}")]
    NotAProbability(String),
    #[error("kernel is not symmetric: {0}")]
    NotSymmetric(String),
    #[error("kernel is not antisymmetric: {0}")]
    NotAntisymmetric(String),
    #[error("walk is reducible: {0}")]
    Reducible(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("covariance matrix is singular or not positive definite")]
    DegenerateCovariance,
    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,
    #[error("free kernel is periodic; asymptotic comparisons need an aperiodic walk")]
    Periodic,
    #[error("box radius {radius} is smaller than the {required} needed for {steps} exact steps")]
    BoxTooSmall { radius: usize, required: usize, steps: usize },
    #[error("operation requires a perturbation of the other parity: {0}")]
    WrongParity(String),
    #[error("n = {n} exceeds the cap of {cap} for this evaluator")]
    CapExceeded { n: usize, cap: usize },
    #[error("grid of size {grid} aliases a field of width {required}")]
    GridTooSmall { grid: usize, required: usize },
    #[error("quadrature did not converge: estimated error {error:e} after {subdivisions} subdivisions")]
    QuadratureNotConverged { error: f64, subdivisions: usize },
    #[error("closed form not available: {0}")]
    UnsupportedDimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable identifier for the error kind.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NotAProbability(_) => "NotAProbability",
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::NotAntisymmetric(_) => "NotAntisymmetric",
            Error::Reducible(_) => "Reducible",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidKernel(_) => "InvalidKernel",
            Error::DegenerateCovariance => "DegenerateCovariance",
            Error::SingularCovariance => "SingularCovariance",
            Error::Periodic => "Periodic",
            Error::BoxTooSmall { .. } => "BoxTooSmall",
            Error::WrongParity(_) => "WrongParity",
            Error::CapExceeded { .. } => "CapExceeded",
            Error::GridTooSmall { .. } => "GridTooSmall",
            Error::QuadratureNotConverged { .. } => "QuadratureNotConverged",
            Error::UnsupportedDimension(_) => "UnsupportedDimension",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
