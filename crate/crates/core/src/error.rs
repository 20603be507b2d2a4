use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("equilibrium E2 is undefined when D = 0")]
    UndefinedEquilibrium,
    #[error("degenerate coefficient: {0}")]
    Degenerate(String),
    #[error("outside domain of validity: {0}")]
    Domain(String),
    #[error("spectral signature mismatch: {0}")]
    Classification(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("trajectory escaped radius {radius} at t = {t}")]
    Divergence { t: f64, radius: f64 },
    #[error("eigenspace dimension mismatch: {0}")]
    Dimension(String),
    #[error("corrector failed: {0}")]
    Corrector(String),
    #[error("rank deficient jacobian at {point:?}")]
    RankDeficient { point: Vec<f64> },
    #[error("section not reached within t = {t_max}")]
    SectionNotReached { t_max: f64 },
    #[error("no bracket: {0}")]
    NoBracket(String),
    #[error("no imaginary eigenvalue pair: {0}")]
    NoImaginaryPair(String),
    #[error("{0}")]
    Other(String),
}
