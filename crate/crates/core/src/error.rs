use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("replay buffer holds {have} experiences, batch needs {need}")]
    WarmUp { have: usize, need: usize },

    #[error("cannot act in an absorbed state")]
    Absorbed,

    #[error("training diverged at gradient step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("problem too large for exhaustive search: {0}")]
    SizeGuard(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
