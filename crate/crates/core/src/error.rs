use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("arrival rate must be non-negative, got {0}")]
    NegativeRate(f64),

    #[error("vehicle {0} is not on the cyber-lane")]
    VehicleNotFound(u64),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("acceleration history too short: {0} samples, need at least 2")]
    HistoryTooShort(usize),

    #[error("savings horizon of {horizon} steps exceeds the {logged} logged steps")]
    HorizonExceedsLog { horizon: usize, logged: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        reason: reason.into(),
    }
}
