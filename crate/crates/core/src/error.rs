use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("incompatible meshes: {0}")]
    IncompatibleMeshes(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("linear solver failed after {iterations} refinement steps, relative residual {residual:e}")]
    SolverFailure { iterations: usize, residual: f64 },
    #[error("time step rejected: {0}")]
    TimeStep(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
