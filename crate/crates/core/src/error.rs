use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("number of centers K must be at least 1 (got {0})")]
    InvalidCenterCount(usize),
    #[error("individuals per center N must be at least 2 (got {0})")]
    InvalidCenterSize(usize),
    #[error("variance ratio {name} must be finite and nonnegative (got {value})")]
    InvalidVarianceRatio { name: &'static str, value: f64 },
    #[error("allocation rate w must lie in the open interval (0, 1) (got {0})")]
    InvalidAllocationRate(f64),
    #[error("treatment group size n must satisfy 1 <= n <= N-1 = {max} (got {n})")]
    InvalidGroupSize { n: usize, max: usize },
    #[error("dispersion matrix diag(u, v) is singular (u = {u}, v = {v}); use the scalar route")]
    SingularDispersion { u: f64, v: f64 },
    #[error("tolerance must lie in (1e-12, 1e-2) (got {0})")]
    InvalidTolerance(f64),
    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
    #[error("invalid center summaries: {0}")]
    InvalidSummaries(String),
    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),
}
