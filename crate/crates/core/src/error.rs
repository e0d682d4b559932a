use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    Domain { what: &'static str, value: f64 },
    /// The request hits a singularity of the formula (e.g. `T''` at 0).
    Singular { what: &'static str },
    /// An iterative solve hit its iteration cap.
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    InvalidGrid(&'static str),
    GridMismatch,
    /// A density dropped below the configured lower bound `rho`.
    DegenerateDensity { min: f64, rho: f64 },
    /// `∫u dμ_ω` vanished while building a special observable.
    DegenerateObservable { mass: f64 },
    /// The experiment is outside the parameter regime where it is meaningful.
    Regime(String),
    Config(String),
    InvalidArgument(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain { what, value } => write!(f, "{what} out of domain: {value}"),
            Error::Singular { what } => write!(f, "singular evaluation: {what}"),
            Error::NoConvergence {
                what,
                iterations,
                residual,
            } => write!(
                f,
                "{what} did not converge after {iterations} iterations (residual {residual:e})"
            ),
            Error::InvalidGrid(reason) => write!(f, "invalid grid: {reason}"),
            Error::GridMismatch => f.write_str("grid functions live on different grids"),
            Error::DegenerateDensity { min, rho } => {
                write!(f, "density minimum {min:e} is below the guard rho = {rho:e}")
            }
            Error::DegenerateObservable { mass } => {
                write!(f, "degenerate special observable: integral of u is {mass:e}")
            }
            Error::Regime(msg) => write!(f, "parameter regime: {msg}"),
            Error::Config(msg) => write!(f, "configuration: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
