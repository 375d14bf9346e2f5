use thiserror::Error;

use crate::tinydit::SubModule;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Inconsistent or out-of-range configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A call argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("enumeration refused: {steps} steps exceeds the tractability bound of {max}")]
    Intractable { steps: usize, max: usize },

    #[error("cache for layer {layer} {sub} is empty at step {step}")]
    MissingCache {
        step: usize,
        layer: usize,
        sub: SubModule,
    },

    #[error("non-finite value at step {step}, layer {layer}")]
    NumericOverflow { step: usize, layer: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
