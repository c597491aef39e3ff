//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::trace::FixedPointTrace;

pub type Result<T> = std::result::Result<T, PatError>;

#[derive(Debug, Error)]
pub enum PatError {
    /// A grid invariant is violated; `field` names the offending quantity
    /// ("nz", "dx", "CFL", ...).
    #[error("invalid grid: {field}: {reason}")]
    Grid { field: &'static str, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad tensor file {path}: {reason}")]
    TensorFile { path: PathBuf, reason: String },

    #[error("singular system after regularization")]
    SingularSystem,

    /// A solver left the finite regime or its objective kept increasing.
    /// Carries the partial trace recorded up to the failure.
    #[error("solver diverged: {reason} (after {} iterations)", trace.len())]
    SolverDiverged {
        reason: String,
        trace: Box<FixedPointTrace>,
    },

    /// The implicit fixed-point solve of the backward pass did not converge.
    #[error(
        "implicit gradient solve did not reach tolerance in {iterations} iterations; \
         the update map is likely not contractive - use smaller tau and sigma"
    )]
    ImplicitSolve { iterations: usize },

    /// Training hit a non-finite loss; the last finite parameter state is
    /// preserved by the caller-visible checkpoint written just before.
    #[error("training aborted at step {step}: non-finite loss")]
    TrainAborted { step: usize },

    #[error("{0}")]
    Generator(String),
}

impl PatError {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        PatError::Shape {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PatError::Io {
            path: path.into(),
            source,
        }
    }
}
