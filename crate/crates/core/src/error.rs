use thiserror::Error;

/// Errors raised across model fitting, simulation and ingestion.
#[derive(Debug, Error)]
pub enum MimosaError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate constraint: {0}")]
    DegenerateConstraint(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("validation error at line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined test: {0}")]
    UndefinedTest(String),

    #[error("diagnostic failure: {0}")]
    Diagnostic(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MimosaError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        MimosaError::Domain(msg.into())
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            MimosaError::Domain(_) => "domain",
            MimosaError::DegenerateConstraint(_) => "degenerate_constraint",
            MimosaError::Initialization(_) => "initialization",
            MimosaError::Parameter(_) => "parameter",
            MimosaError::Validation { .. } => "validation",
            MimosaError::Schema(_) => "schema",
            MimosaError::Config(_) => "config",
            MimosaError::UndefinedTest(_) => "undefined_test",
            MimosaError::Diagnostic(_) => "diagnostic",
            MimosaError::Io(_) => "io",
            MimosaError::Csv(_) => "csv",
            MimosaError::Json(_) => "json",
        }
    }

    /// Process exit status: 3 when fitting itself failed, 2 for bad input or configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            MimosaError::Diagnostic(_) | MimosaError::Initialization(_) | MimosaError::DegenerateConstraint(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, MimosaError>;
