use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// Invalid scenario or parameter combination, detected before simulating.
    #[error("configuration error: {0}")]
    Config(String),

    /// Argument outside the domain of a model function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A percentile or verdict was requested over an empty sample set.
    #[error("undefined report: {0}")]
    EmptySamples(String),

    /// Violated simulator invariant.
    #[error("internal assertion failed: {0}")]
    Internal(String),

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<SimError>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        SimError::Internal(msg.into())
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) | SimError::Domain(_) | SimError::EmptySamples(_) => 2,
            SimError::Io(_) => 2,
            SimError::Internal(_) => 3,
            SimError::Seed { source, .. } => source.exit_code(),
        }
    }
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

impl From<csv::Error> for SimError {
    fn from(e: csv::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for SimError {
    fn from(e: serde_json::Error) -> Self {
        SimError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
