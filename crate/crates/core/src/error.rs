use thiserror::Error;

/// Failures surfaced by the numerical modules and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A model, experiment or operation argument violates its contract.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    /// The energy is numerically an eigenvalue and no regularization was given.
    #[error("singular solve at E = {energy}: nearest eigenvalue {nearest}")]
    SingularSolve { energy: f64, nearest: f64 },

    /// An iterative refinement (quadrature, grid refinement) failed to settle.
    #[error("no convergence: last estimate {last}, previous {previous}")]
    NonConvergence { last: f64, previous: f64 },

    /// A matrix that has to be inverted is numerically singular.
    #[error("ill-conditioned {what}: condition estimate {condition:e}")]
    IllConditioned { what: String, condition: f64 },

    /// A linear solve missed its residual target.
    #[error("inaccurate {what}: relative residual {residual:e}")]
    Inaccurate { what: String, residual: f64 },

    /// The Simon-Lieb kernel does not contract.
    #[error("kernel is not contractive: measured product {product}")]
    NotContractive { product: f64 },

    /// Not enough data to form the requested statistic.
    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than numerical breakdown.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Invalid { .. } | Error::Json(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
