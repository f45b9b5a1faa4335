use thiserror::Error;

/// Errors raised by model construction and evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GtrError {
    /// A numeric argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A value object could not be constructed (zero vector, malformed density, ...).
    #[error("construction error: {0}")]
    Construction(String),

    /// One or more density contexts or measurement ids could not be resolved.
    #[error("missing key(s): {}", .keys.join(", "))]
    Lookup { keys: Vec<String> },

    /// Inputs are well-formed individually but do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// A document failed validation at the given JSON path.
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
}

impl GtrError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        GtrError::Domain(msg.into())
    }

    pub(crate) fn construction(msg: impl Into<String>) -> Self {
        GtrError::Construction(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        GtrError::Structural(msg.into())
    }

    pub(crate) fn lookup(key: impl Into<String>) -> Self {
        GtrError::Lookup { keys: vec![key.into()] }
    }

    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        GtrError::Validation {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GtrError>;
