use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("point outside domain: {0}")]
    Domain(String),

    #[error("mode search did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate mode: {0}")]
    DegenerateMode(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate Monte Carlo estimate: {0}")]
    DegenerateMc(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short stable tag used in error-coded CSV rows.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension",
            Error::NotPositiveDefinite(_) => "not_spd",
            Error::Unsupported(_) => "unsupported",
            Error::Domain(_) => "domain",
            Error::NonConvergence { .. } => "nonconvergence",
            Error::NonFinite(_) => "nonfinite",
            Error::DegenerateMode(_) => "degenerate_mode",
            Error::Infeasible(_) => "infeasible",
            Error::DegenerateMc(_) => "degenerate_mc",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
