use thiserror::Error;

/// Errors raised anywhere in the allocation engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A scenario or algorithm parameter is out of range.
    #[error("configuration error: {0}")]
    Config(String),
    /// A physical quantity lies outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),
    /// The model cannot be evaluated for the given combination of inputs.
    #[error("model error: {0}")]
    Model(String),
    /// An allocation violates a structural requirement.
    #[error("validation error: {0}")]
    Validation(String),
    /// No point satisfies the constraints.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// The Newton system stayed singular after regularization.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_))
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
