use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("diverged at step {step} (loss {loss:e})")]
    Diverged { step: usize, loss: f64 },
    #[error("budget exceeded: need {needed}, budget {budget}")]
    Budget { needed: u64, budget: u64 },
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures caused by the numbers rather than by the request.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Singular(_) | Error::NonFinite(_) | Error::Diverged { .. }
        )
    }
}
