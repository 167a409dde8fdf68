use thiserror::Error;

/// Errors raised by the auditing library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    /// A configuration value is outside its admissible range.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// An input value is outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller-supplied quantity breaks an invariant the test relies on for validity.
    #[error("invariant violation: {0}")]
    Invariant(String),
    /// The operation is not allowed in the session's current state.
    #[error("invalid state: {0}")]
    State(String),
}

pub type Result<T, E = AuditError> = std::result::Result<T, E>;
