use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the operation's domain (negative force, out-of-limit joint, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// Object-position angle is undefined because the contact midpoint sits on `O`.
    #[error("object position undefined: contact midpoint coincides with the frame origin")]
    UndefinedAngle,
    #[error("trial record is incomplete (outcome {0})")]
    IncompleteRecord(String),
    #[error("dataset cannot be stratified: {0}")]
    NotStratifiable(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("catalog mismatch: {0}")]
    CatalogMismatch(String),
    #[error("experiment failed: {0}")]
    Experiment(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Validation failures map to exit code 2, experiment failures to 3.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Experiment(_) | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
