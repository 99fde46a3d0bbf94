use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Vectors or matrices of incompatible sizes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Cholesky factorization broke down; `minor` is the 1-based order of the
    /// first leading minor that is not positive.
    #[error("matrix is not positive definite (leading minor {minor} failed)")]
    NotPositiveDefinite { minor: usize },

    /// The chain has more than one closed communicating class.
    #[error("chain is reducible: closed classes {classes:?}")]
    Reducible { classes: Vec<Vec<usize>> },

    /// Geometric series over the chain do not converge (periodic chain).
    #[error("chain does not mix: {0}")]
    Convergence(String),

    /// A constructed object violated a property the theory guarantees.
    #[error("internal consistency: {0}")]
    Consistency(String),

    /// The rectangle solver bracket does not straddle the target level.
    #[error("bracket [{lo}, {hi}] does not straddle {target}: P(lo) = {p_lo}, P(hi) = {p_hi}")]
    Bracket {
        lo: f64,
        hi: f64,
        p_lo: f64,
        p_hi: f64,
        target: f64,
    },

    /// The delta-method covariance handed to the interval solver is singular.
    #[error(
        "asymptotic covariance is singular (smallest eigenvalue {min_eigenvalue:e}); \
         inject noise with epsilon > 0 to make it non-degenerate"
    )]
    SingularCovariance { min_eigenvalue: f64 },

    /// Adaptive quadrature ran out of subdivisions.
    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    /// Text input could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Data failed a model requirement (full rank, response outside span).
    #[error("data condition failed: {0}")]
    DataCondition(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
