use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid delay kernel: {0}")]
    InvalidKernel(String),
    #[error("infinite moment: exponent {c} is not below exponential rate {rate}")]
    InfiniteMoment { c: f64, rate: f64 },
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error("incompatible segment grids: {0}")]
    IncompatibleGrids(String),
    #[error("kappa2 = {kappa2} is not contractive (must be < 1)")]
    Kappa2NotContractive { kappa2: f64 },
    #[error("eigensolver failed to converge for a {n}x{n} matrix")]
    EigensolverFailure { n: usize },
    #[error("partition group {group} is empty")]
    EmptyGroup { group: usize },
    #[error("switching space is not finite; supply a truncated generator or analytic group bounds")]
    NonFiniteState,
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("neutral fixed point diverged at t = {t} after {iterations} iterations (last update {residual:e})")]
    FixedPointDiverged { t: f64, iterations: usize, residual: f64 },
    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },
    #[error("transport problem of size {n}x{m} exceeds the exact-solver limit")]
    SizeLimit { n: usize, m: usize },
    #[error("non-positive mean {mean} at t = {t}; shrink the fit window")]
    NonpositiveMean { t: f64, mean: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
