use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the numerical core (model evaluation, estimation, simulation).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("covariate history has {available} rows, {required} needed for t = {t}")]
    InsufficientHistory {
        t: usize,
        required: usize,
        available: usize,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("latent path enumeration supports y <= {max}, got y = {y}")]
    EnumerationBound { y: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("likelihood is not finite at any of the {starts} starting points")]
    FitFailure { starts: usize },

    #[error("inner {stage} solver failed after {iterations} iterations (gradient max-norm {grad_norm:.3e})")]
    InnerOptimizer {
        stage: &'static str,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("negated Hessian is not positive definite: eigenvalue {eigenvalue:.6e}, eigenvector dominated by coordinate {index}")]
    NotPositiveDefinite { index: usize, eigenvalue: f64 },

    #[error("{failed} of {total} bootstrap replicates failed")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("misaligned inputs: {0}")]
    Misaligned(String),
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
