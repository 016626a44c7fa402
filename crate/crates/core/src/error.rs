use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A log density, gradient or operator output was not finite. Carries the
    /// offending iterate so callers can report divergence.
    #[error("numerical overflow at iterate of dimension {}", iterate.len())]
    NumericalOverflow { iterate: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("trace format: {0}")]
    Format(String),
}

impl Error {
    pub fn overflow<T: num_traits::ToPrimitive>(iterate: &[T]) -> Self {
        Error::NumericalOverflow {
            iterate: iterate.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect(),
        }
    }

    pub fn is_overflow(&self) -> bool {
        matches!(self, Error::NumericalOverflow { .. })
    }
}
