use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("particle set must contain at least one value")]
    EmptyParticles,

    #[error("non-finite particle value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("{name} = {value} is outside its domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("sinkhorn produced a non-finite value at temperature {epsilon}")]
    NumericalFailure { epsilon: f64 },

    #[error("proximal loss increased on every trial step at gradient step {step}")]
    Divergence { step: usize },

    #[error("episode {episode}, step {step}: {source}")]
    Learner {
        episode: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{method}, trial {trial} (seed {seed}): {source}")]
    Trial {
        method: String,
        trial: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            expected,
        }
    }

    /// True when the error stems from bad user input rather than a numerical failure.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Trial { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
