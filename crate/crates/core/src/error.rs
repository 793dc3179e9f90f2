use thiserror::Error;

/// Errors raised anywhere in the identification/estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("degenerate variable {name}: max == min == {value}")]
    DegenerateVariable { name: String, value: f64 },

    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("soil profile saturated at step {step}, compartment {compartment} (head {head})")]
    Saturated {
        step: usize,
        compartment: usize,
        head: f64,
    },

    #[error("singular matrix in {0}")]
    Singular(String),

    #[error("quadratic program infeasible: {0}")]
    Infeasible(String),

    #[error("quadratic program hit the iteration limit ({0})")]
    MaxIterations(usize),

    #[error("estimator failure at instant {instant}, subsystem {subsystem}: {source}")]
    Estimator {
        instant: usize,
        subsystem: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("subsystem {subsystem}: {source}")]
    Subsystem {
        subsystem: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    /// True for errors caused by user input (configuration, files) rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Topology(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
