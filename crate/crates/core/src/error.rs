use thiserror::Error;

/// Errors raised by the numerical layers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum LieError {
    #[error("algebra tag mismatch: {0}")]
    TagMismatch(String),
    #[error("domain error in {op}: {detail} (residual {residual:.3e})")]
    Domain {
        op: &'static str,
        detail: String,
        residual: f64,
    },
    #[error("numerical failure in {op}: {detail}")]
    Numerical { op: &'static str, detail: String },
    #[error("non-finite state at step {step}")]
    BlowUp { step: usize },
    #[error("consistency check failed in {op}: residual {residual:.3e} exceeds {tolerance:.3e}")]
    Consistency {
        op: &'static str,
        residual: f64,
        tolerance: f64,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl LieError {
    /// Re-tag a blow-up with the driver's step counter.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            LieError::BlowUp { .. } => LieError::BlowUp { step },
            other => other,
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>, residual: f64) -> Self {
        LieError::Domain {
            op,
            detail: detail.into(),
            residual,
        }
    }

    pub(crate) fn numerical(op: &'static str, detail: impl Into<String>) -> Self {
        LieError::Numerical {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, LieError>;
