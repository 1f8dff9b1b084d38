use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The simulated state left the finite range.
    #[error("path blew up at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error(
        "derivative check failed for {name} at {point:?}: supplied {supplied}, finite difference {finite_difference}"
    )]
    DerivativeMismatch {
        name: String,
        point: Vec<f64>,
        supplied: f64,
        finite_difference: f64,
    },

    #[error("weight floor violated at t = {time}: alpha = {alpha} < k = {floor}")]
    WeightFloor { time: f64, alpha: f64, floor: f64 },

    #[error("exponential process not positive at step {step}")]
    NonPositiveExponential { step: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
