use thiserror::Error;

/// Crate-wide error type. The CLI maps these onto exit codes, so the
/// variants distinguish caller mistakes (preconditions), resource limits
/// (budgets), and internal numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("symmetry error: {0}")]
    Symmetry(String),
    #[error("precondition error: {0}")]
    Precondition(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("net construction error: {0}")]
    Net(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("json error: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
