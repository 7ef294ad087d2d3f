use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input data.
    #[error("{0}")]
    Validation(String),

    /// Fitting or effect estimation failed on valid input.
    #[error("{0}")]
    Estimation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Estimation(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Estimation(_) => "estimation",
            CliError::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// The JSON object printed to stderr on failure.
    pub fn report(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: String,
            exit_code: i32,
        }
        let r = Report { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() };
        serde_json::to_string(&r).expect("error report serializes")
    }
}

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Validation(msg.into()))
}

impl From<dynfx::Error> for CliError {
    fn from(e: dynfx::Error) -> Self {
        match e {
            dynfx::Error::InvalidInput(_) | dynfx::Error::Identifiability(_) => CliError::Validation(e.to_string()),
            dynfx::Error::Inference { .. } | dynfx::Error::Estimation(_) => CliError::Estimation(e.to_string()),
        }
    }
}

impl From<dynfx_sim::SimError> for CliError {
    fn from(e: dynfx_sim::SimError) -> Self {
        match e {
            dynfx_sim::SimError::Model(inner) => inner.into(),
            dynfx_sim::SimError::Benchmark(_) => CliError::Estimation(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
