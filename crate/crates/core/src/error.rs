use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A constructor or operation received an out-of-range argument.
    InvalidArgument(String),
    /// Two inputs that must agree in size do not.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// An iterative linear solve stopped before reaching its tolerance.
    SolverNotConverged { iterations: usize, relative_residual: f64 },
    /// A linearization cache was used with controls it was not built from.
    StaleCache { cache_token: u64, controls_token: u64 },
    /// The optimizer produced a non-finite cost or gradient.
    NumericalFailure { iteration: usize, detail: String },
    /// A metric's denominator vanished.
    UndefinedMetric(&'static str),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected,
                found,
            })
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "dimension mismatch for {what}: expected {expected}, found {found}"),
            Error::SolverNotConverged {
                iterations,
                relative_residual,
            } => write!(
                f,
                "linear solve did not converge after {iterations} iterations (relative residual {relative_residual:e})"
            ),
            Error::StaleCache {
                cache_token,
                controls_token,
            } => write!(
                f,
                "stale linearization cache: built for controls version {cache_token}, called with version {controls_token}"
            ),
            Error::NumericalFailure { iteration, detail } => {
                write!(f, "numerical failure at iteration {iteration}: {detail}")
            }
            Error::UndefinedMetric(what) => write!(f, "undefined metric: {what}"),
        }
    }
}

impl core::error::Error for Error {}
