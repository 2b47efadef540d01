use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structure family too large: {0}")]
    CapExceeded(String),

    #[error("active-set projection did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("pulled-back gradient has non-finite entries at step {step}")]
    DivergedGradient { step: usize },

    #[error("training diverged at epoch {epoch}")]
    DivergedRun { epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
