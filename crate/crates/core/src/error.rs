use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: |M[{row},{col}] - M[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("spikes {first} and {second} are not orthogonal (inner product {inner:e})")]
    NotOrthogonal {
        first: usize,
        second: usize,
        inner: f64,
    },

    #[error("basis columns are not orthonormal (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },

    #[error("eigengap precondition violated by eigenvalue {eigenvalue}")]
    EigengapViolated { eigenvalue: f64 },

    #[error("quadrature did not reach tolerance: estimate {estimate:e}, error {error:e}")]
    QuadratureTolerance { estimate: f64, error: f64 },

    #[error("oracle enumeration over p = {p} exceeds cap {cap}")]
    OracleCap { p: usize, cap: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument { .. }
            | Error::DimensionMismatch { .. }
            | Error::OracleCap { .. } => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
            _ => 3,
        }
    }
}
