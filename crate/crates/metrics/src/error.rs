use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    /// The score is undefined because a denominator would be zero.
    #[error("undefined input: {0}")]
    UndefinedInput(String),
    #[error("unsupported n-gram order {0}; expected 1 or 2")]
    UnsupportedOrder(usize),
    /// An embedding provider returned vectors violating its contract.
    #[error("embedding provider contract violated: {0}")]
    ProviderContract(String),
    #[error("invalid input document: {0}")]
    Input(String),
}
