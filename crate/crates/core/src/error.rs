use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    Mesh(String),

    #[error("shape mismatch: expected {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid material model: {0}")]
    Material(String),

    #[error("negative temperature {0} is outside the domain of the heat capacity")]
    NegativeTemperature(f64),

    #[error("negative weight {value} at node {node}")]
    NegativeWeight { node: usize, value: f64 },

    #[error("non-positive conductivity {value} at node {node}")]
    NonPositiveConductivity { node: usize, value: f64 },

    #[error("linear solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    LinearSolve { iterations: usize, residual: f64 },

    #[error("inconsistent right-hand side for a singular Neumann system (mean {0:.3e})")]
    Inconsistent(f64),

    #[error("phase-field solve did not converge: projected residual {residual:.3e} after {iterations} iterations")]
    ChiSolve { iterations: usize, residual: f64 },

    #[error("coupled step {step} did not converge: increment {increment:.3e} after {iterations} sweeps")]
    FixedPoint { step: usize, iterations: usize, increment: f64 },

    #[error("invalid initial data: {0}")]
    InitialData(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("snapshot parse error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
