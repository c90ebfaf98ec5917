use thiserror::Error;

/// Errors raised by the simulation, oracle, and theory layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid action distribution: {0}")]
    InvalidSpec(String),

    #[error("invalid harness plan: {0}")]
    InvalidPlan(String),

    #[error("invalid stage config: {0}")]
    InvalidConfig(String),

    #[error("action pool is empty")]
    EmptyPool,

    #[error("pool shaping out of range: {0}")]
    ShapeOutOfRange(String),

    #[error("degenerate truncation normalizer {normalizer:e} for mu={mu}, sigma={sigma}, bounds=[{lower}, {upper}]")]
    DegenerateNormalizer {
        mu: f64,
        sigma: f64,
        lower: i64,
        upper: i64,
        normalizer: f64,
    },

    #[error("oracle state space of {states} states exceeds the limit of {limit}")]
    StateSpaceOverflow { states: u64, limit: u64 },

    #[error("coverage {coverage} is not on the slice grid 0..={max}")]
    OffGrid { coverage: i64, max: i64 },

    #[error("invalid filtering instance: {0}")]
    InvalidInstance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
