use thiserror::Error;

/// Errors produced by the fitting pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("time grid must be strictly increasing with at least 4 points (got {0})")]
    InvalidGrid(String),
    #[error("break-point location {tau} lies outside the open interval ({lo}, {hi})")]
    OutOfRange { tau: f64, lo: f64, hi: f64 },
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("invalid series data: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("gamma must be positive (got {0})")]
    NonPositive(f64),
    #[error("Bayes2 model prior needs jstar >= 2 (got {0})")]
    DegeneratePrior(usize),
    #[error("break-point locations {0:?} are outside the admissible region")]
    OutsideOmega(Vec<f64>),
    #[error("no posterior draws")]
    EmptyDraws,
    #[error("a forecast horizon needs a forecast population rule")]
    MissingForecastPopulation,
    #[error("unknown parameter `{0}` (expected alpha, beta0 or gamma)")]
    UnknownParameter(String),
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("Newton-Raphson did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("no admissible break-point locations on the search grid")]
    EmptyGrid,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("malformed input at line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
