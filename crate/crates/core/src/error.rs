use thiserror::Error;

pub type Result<T> = std::result::Result<T, DraeError>;

#[derive(Debug, Error)]
pub enum DraeError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate vector: {0}")]
    DegenerateVector(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("expert {0} does not exist")]
    MissingExpert(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("line {line}: {msg}")]
    Corpus { line: usize, msg: String },

    #[error("invalid rule set: {0}")]
    RuleSet(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_err(what: &str, expected: usize, got: usize) -> DraeError {
    DraeError::Shape(format!("{what}: expected {expected}, got {got}"))
}
