use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("Kron reduction singular: passive buses {buses:?} are not tied to any source or retained bus")]
    ReductionSingular { buses: Vec<u32> },

    #[error("invalid operating point: {0}")]
    InvalidOperatingPoint(String),

    #[error("unsupported placement: {0}")]
    UnsupportedPlacement(String),

    #[error("QP infeasible; inconsistent rows {rows:?}")]
    Infeasible { rows: Vec<usize> },

    #[error("regression infeasible ({hint}); conflicting samples {samples:?}")]
    FitInfeasible { samples: Vec<usize>, hint: String },

    #[error("QP unbounded along a zero-curvature feasible ray")]
    Unbounded,

    #[error("degenerate regression objective: {0}")]
    DegenerateObjective(String),

    #[error("data not separable by a linear boundary up to nu = {nu}")]
    DataInseparable { nu: f64 },

    #[error("invalid covariance: eigenvalue {eigenvalue} below repair threshold")]
    InvalidCovariance { eigenvalue: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unit commitment infeasible: {0}")]
    UcInfeasible(String),

    #[error("Monte Carlo invalid: {dropped} of {total} samples dropped")]
    McInvalid { dropped: usize, total: usize },

    #[error("MAPE undefined: every reference value is below 1e-9 in magnitude")]
    UndefinedMape,

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
