use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("target matrix has zero Frobenius norm")]
    ZeroNormTarget,

    #[error("observation ({row}, {col}) lies outside a {d1}x{d2} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        d1: usize,
        d2: usize,
    },

    #[error("observation ({row}, {col}) appears more than once")]
    DuplicateObservation { row: usize, col: usize },

    #[error("inclusion probability {probability} at ({row}, {col}) exceeds 1")]
    InfeasibleInclusion {
        row: usize,
        col: usize,
        probability: f64,
    },

    #[error("cannot draw {requested} distinct cells; only {available} are available")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("objective is not finite at iteration {iteration} (rank {rank})")]
    NonFiniteObjective { iteration: usize, rank: usize },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("held-out set is empty")]
    EmptyHeldOut,

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Wraps the error with a human-readable location, e.g. a grid point.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
