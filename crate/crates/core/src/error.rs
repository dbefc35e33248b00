use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("failed to parse {origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("task has {task} coordinates but the chain only has {dof} joints")]
    InsufficientDof { dof: usize, task: usize },

    #[error("simulation diverged at t = {time:.4} s: joint {joint} velocity {velocity:.3e} rad/s exceeds {limit:.1e}")]
    Diverged {
        time: f64,
        joint: usize,
        velocity: f64,
        limit: f64,
    },

    #[error("simulation failed at t = {time:.4} s: {source}")]
    StepFailed {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("observer state reused out of order (t = {time} after {last})")]
    StaleObserverState { time: f64, last: f64 },

    #[error("degenerate sensitivity denominator at omega = {0} rad/s")]
    DegenerateDenominator(f64),

    #[error("reaching start coincides with the target (|dx0| = {0:.3e} m)")]
    DegenerateStart(f64),

    #[error("start and target coincide; chord length is {0:.3e} m")]
    DegenerateChord(f64),

    #[error("trace is empty")]
    EmptyTrace,

    #[error("comparison precondition failed: {0}")]
    ComparisonMismatch(String),

    #[error("unknown plot selection '{0}'")]
    UnknownSelection(String),

    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn parse(origin: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            origin: origin.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

pub(crate) fn check_finite<'a>(what: &'static str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
