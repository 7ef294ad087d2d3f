use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("infeasible assignment: {0}")]
    Assignment(String),
    #[error("misaligned series: {0}")]
    Misaligned(String),
    #[error("benchmark failed: {0}")]
    Benchmark(String),
    #[error(transparent)]
    Model(#[from] dynfx::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
