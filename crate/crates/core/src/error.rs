use thiserror::Error;

use crate::optimizer::SolveTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input.
    #[error("invalid input: {0}")]
    Input(String),

    /// Line-numbered parse failure in a text input file (lines are 1-based).
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Some state was never observed as the source of a transition.
    #[error("state {state} never left in the trace; extend the observation period")]
    InsufficientObservations { state: usize },

    /// The matrix is reducible where an irreducible one is required.
    #[error("structural error: {0}")]
    Structural(String),

    /// An iterative routine did not reach its tolerance.
    #[error("numerical failure: {msg} (residual {residual:e})")]
    Numerical { msg: String, residual: f64 },

    /// The point lies on the I3 boundary, where the gradient of the decay rate is undefined.
    #[error("point lies on the boundary where mean arrival rate equals mean service rate")]
    Boundary,

    /// The Armijo rule exhausted its budget of step reductions.
    #[error("line search failed after {reductions} step reductions at outer iteration {iteration}")]
    LineSearch {
        iteration: usize,
        reductions: usize,
        trace: Box<SolveTrace>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numerical(msg: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            msg: msg.into(),
            residual,
        }
    }

    /// Process exit code: 2 for input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_)
            | Error::Parse { .. }
            | Error::InsufficientObservations { .. }
            | Error::Structural(_)
            | Error::Unsupported(_)
            | Error::Io(_) => 2,
            Error::Numerical { .. } | Error::Boundary | Error::LineSearch { .. } => 3,
        }
    }
}
