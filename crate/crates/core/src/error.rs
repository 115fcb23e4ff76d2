use thiserror::Error;

/// Coarse classification used by front ends to map failures to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid arguments or configuration.
    Usage,
    /// Problems with input data (files, labels, panel shape).
    Data,
    /// Numerical failures (non-PD matrices, convergence).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV ({context}): {message}")]
    MalformedCsv { context: String, message: String },

    #[error("insufficient data: need at least {needed} periods, got {got}")]
    InsufficientPeriods { needed: usize, got: usize },

    #[error("no assets left after dropping assets with missing values")]
    NoAssets,

    #[error("non-positive price {value} for asset `{asset}` at row {row}")]
    NonPositivePrice {
        asset: String,
        row: usize,
        value: f64,
    },

    #[error("period labels are not strictly increasing at position {index}")]
    NonIncreasingPeriods { index: usize },

    #[error("asset `{0}` has no membership record")]
    UnknownAsset(String),

    #[error("inconsistent group hierarchy: {0}")]
    InconsistentHierarchy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("window of {window} periods exceeds the {available} available")]
    WindowTooLarge { window: usize, available: usize },

    #[error("requested rank {requested} exceeds the admissible maximum {max} ({context})")]
    RankTooLarge {
        requested: usize,
        max: usize,
        context: String,
    },

    #[error("asset at index {index} has non-positive variance {value}")]
    DegenerateAsset { index: usize, value: f64 },

    #[error("threshold constant is `auto` and has not been resolved")]
    TauUnresolved,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("idiosyncratic component is singular and PD repair is disabled")]
    SingularIdiosyncratic,

    #[error(
        "leading eigenvalue {index} of the distorted global component is non-positive ({value})"
    )]
    NonPositiveLeadingEigenvalue { index: usize, value: f64 },

    #[error("could not draw a positive definite idiosyncratic covariance in {attempts} attempts")]
    PdRegenerationExceeded { attempts: usize },

    #[error(
        "solver did not converge in {iterations} iterations (primal residual {primal:.3e}, dual residual {dual:.3e})"
    )]
    ConvergenceFailure {
        iterations: usize,
        primal: f64,
        dual: f64,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Usage,
            Error::Io { .. }
            | Error::MalformedCsv { .. }
            | Error::InsufficientPeriods { .. }
            | Error::NoAssets
            | Error::NonPositivePrice { .. }
            | Error::NonIncreasingPeriods { .. }
            | Error::UnknownAsset(_)
            | Error::InconsistentHierarchy(_)
            | Error::WindowTooLarge { .. } => ErrorKind::Data,
            Error::DimensionMismatch(_)
            | Error::RankTooLarge { .. }
            | Error::DegenerateAsset { .. }
            | Error::TauUnresolved
            | Error::NotPositiveDefinite(_)
            | Error::SingularIdiosyncratic
            | Error::NonPositiveLeadingEigenvalue { .. }
            | Error::PdRegenerationExceeded { .. }
            | Error::ConvergenceFailure { .. } => ErrorKind::Numeric,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
