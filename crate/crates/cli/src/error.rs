use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown scenario '{name}'; registered: {registered}")]
    UnknownScenario { name: String, registered: String },
    #[error("invalid config field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Io(String),
}

impl HarnessError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
