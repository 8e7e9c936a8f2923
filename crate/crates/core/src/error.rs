use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty shape {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("infeasible margin: acceptance rate {rate:.5} is below {min_rate} over {draws} pilot draws")]
    InfeasibleMargin {
        rate: f64,
        min_rate: f64,
        draws: usize,
    },

    #[error("degenerate teacher: positive-label fraction {positive_fraction:.4} outside [0.05, 0.95]")]
    DegenerateTeacher { positive_fraction: f64 },

    #[error("gradient descent diverged at step {step}: non-finite gradient")]
    Divergence { step: usize },

    #[error("malformed file at {location}: {message}")]
    Format { location: String, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            location: location.into(),
            message: message.into(),
        }
    }
}
