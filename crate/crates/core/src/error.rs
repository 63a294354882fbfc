use thiserror::Error;

/// Errors raised by the inference engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical evaluation produced a non-finite value or hit a singular matrix.
    #[error("numeric failure: {what} (step {step}, s = {time}, x = {state:?})")]
    NumericFailure {
        what: String,
        step: usize,
        time: f64,
        state: Vec<f64>,
    },

    /// Every particle weight vanished at observation `t` (zero-based).
    #[error("all particle weights are zero at observation {t}")]
    DegenerateWeights { t: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(what: impl Into<String>) -> Self {
        Error::NumericFailure {
            what: what.into(),
            step: 0,
            time: f64::NAN,
            state: Vec::new(),
        }
    }

    pub(crate) fn numeric_at(what: impl Into<String>, step: usize, time: f64, state: &[f64]) -> Self {
        Error::NumericFailure {
            what: what.into(),
            step,
            time,
            state: state.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
