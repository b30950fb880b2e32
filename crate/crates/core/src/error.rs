use alloc::string::String;
use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A precondition on arguments or configuration failed.
    #[error("validation error: {0}")]
    Validation(String),
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The operation is not defined for this input (e.g. derivative of a degree-0 basis).
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    /// The quantile curve is flat across the target value, so the inverse is not unique.
    #[error("degenerate solution: quantile curve is flat on [{lo}, {hi}]")]
    Degenerate { lo: f64, hi: f64 },
    /// A numerical evaluation produced an unusable value.
    #[error("evaluation error: {0}")]
    Evaluation(String),
    /// An observation failed during likelihood evaluation.
    #[error("observation {index} at site {site} failed: {source}")]
    Observation {
        site: usize,
        index: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;

impl Error {
    /// True for errors caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Degenerate { .. } | Error::Evaluation(_) => true,
            Error::Observation { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
