use thiserror::Error;

/// Errors raised by the simulation, clustering, control and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A model parameter violates its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An agent pair refers to agents outside `0..n` or repeats an agent.
    #[error("invalid agent pair ({i}, {j}) for n = {n}")]
    InvalidPair { i: usize, j: usize, n: usize },

    /// An opinion vector has the wrong length or leaves the unit box.
    #[error("state outside domain: {0}")]
    Domain(String),

    /// The requested operation is only valid for a weighting factor in [1/2, 1).
    #[error("weighting factor mu = {mu} outside [1/2, 1): the control construction does not apply")]
    TheoremDomain { mu: f64 },

    /// An operation's precondition does not hold on the given input.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Exhaustive enumeration would exceed the configured path budget.
    #[error("enumeration needs {required} paths but the budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },

    /// A trace would exceed the configured memory cap.
    #[error("trace would need about {required} bytes (cap {cap}); increase thinning")]
    TraceTooLarge { required: u128, cap: u128 },

    /// An integer-valued bound does not fit in 64 bits.
    #[error("arithmetic overflow evaluating {0}")]
    Overflow(&'static str),

    /// The synthesizer could not make progress (floating-point degeneracy).
    #[error("control synthesis stalled: {0}")]
    SynthesisStalled(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed artifact: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Format(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        if err.is_io_error() {
            Error::Io(err.to_string())
        } else {
            Error::Format(err.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
