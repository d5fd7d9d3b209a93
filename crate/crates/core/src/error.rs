use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// The variants are grouped so that callers (the CLI in particular) can map
/// them onto coarse categories with [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("schema inference failed for column `{column}`: {message}")]
    Inference { column: String, message: String },

    #[error("cannot fit preprocessor for column `{column}`: {message}")]
    Fit { column: String, message: String },

    #[error("cannot encode column `{column}`: unseen category `{label}`")]
    UnseenCategory { column: String, label: String },

    #[error("cannot decode column `{column}`: {message}")]
    Decode { column: String, message: String },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for {what} of size {size}")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss} (timestep histogram {histogram:?})")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        histogram: Vec<usize>,
    },

    #[error("missingness calibration failed: {0}")]
    Calibration(String),

    #[error("probe failure: {0}")]
    Probe(String),

    #[error("invalid request: {0}")]
    Request(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Training,
    Mismatch,
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) | Error::Json(_) => ErrorCategory::Config,
            Error::SchemaMismatch(_) | Error::Checkpoint(_) => ErrorCategory::Mismatch,
            Error::Diverged { .. }
            | Error::NonFiniteGradient(_)
            | Error::Numeric(_)
            | Error::Shape { .. } => ErrorCategory::Training,
            _ => ErrorCategory::Data,
        }
    }
}
