use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// An exponential or rate left the representable range.
    #[error("value out of range while evaluating {what}")]
    OutOfRange { what: &'static str },

    #[error("step size control failed at t = {t}: {reason}")]
    StepSize { t: f64, reason: String },

    /// A discretisation produced a state that violates a hard invariant
    /// (negative density, mass drift, negative probability).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A reference distribution failed its validation gate.
    #[error("validation gate rejected reference: {0}")]
    Gate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Io(_) | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Returns `value` when finite, otherwise the out-of-range signal for `what`.
#[inline]
pub(crate) fn finite<T: num_traits::Float>(value: T, what: &'static str) -> Result<T> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::OutOfRange { what })
    }
}
