use thiserror::Error;

#[derive(Debug, Error)]
pub enum DwpError {
    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid carcass (turbine {turbine}, record {record}): {reason}")]
    InvalidCarcass {
        turbine: String,
        record: usize,
        reason: String,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("model is not extensible: {0}")]
    NotExtensible(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("no viable model: {0}")]
    NoViableModel(String),

    #[error("simulation error: {0}")]
    Simulation(String),

    /// Input table does not match the expected schema.
    #[error("schema mismatch in {source_name}: {detail}")]
    Schema { source_name: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DwpError>;
