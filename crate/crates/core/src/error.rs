use thiserror::Error;

pub type Result<T> = std::result::Result<T, CouplingError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error("invalid parameter `{name}` = {value}: {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: String,
    },

    /// Exponential moment requested outside the region where it is finite.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported curvature k = {0} for this operation: {1}")]
    UnsupportedCurvature(i8, &'static str),

    #[error("too few samples: {got} (need at least {need})")]
    TooFewSamples { got: usize, need: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("worker pool: {0}")]
    Pool(String),
}

impl CouplingError {
    pub(crate) fn invalid(name: &'static str, value: f64, constraint: impl Into<String>) -> Self {
        CouplingError::InvalidParameter {
            name,
            value,
            constraint: constraint.into(),
        }
    }
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(CouplingError::invalid(name, value, "must be finite and > 0"))
    }
}
