use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A partial outcome (or a settlement event) admits no valid payoff vector.
    #[error("consistency violation: {0}")]
    Consistency(String),

    /// The conjugate gradient was requested at a price on the boundary of [0, 1].
    #[error("price {value} of unsettled security {index} lies on the boundary")]
    Boundary { index: usize, value: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_consistency(&self) -> bool {
        matches!(self, Error::Consistency(_))
    }
}
