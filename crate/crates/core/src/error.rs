use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A network or config file did not match its schema. `location` names
    /// the field (and line, when the parser knows it).
    #[error("schema error in {path}: {location}: {message}")]
    Schema {
        path: String,
        location: String,
        message: String,
    },

    #[error("numerical failure at t = {time} ps: {message}")]
    NumericalFailure { time: f64, message: String },

    #[error("sweep needs {estimated} propagations, budget is {cap}")]
    BudgetExceeded { estimated: u64, cap: u64 },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
