use thiserror::Error;

/// Rejected input: an invariant of a grid, band, problem or kernel argument
/// does not hold.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("empty domain: a = {a} must be strictly less than b = {b}")]
    EmptyDomain { a: f64, b: f64 },
    #[error("grid needs at least 2 intervals (one interior node), got {0}")]
    TooFewIntervals(usize),
    #[error("time step count must be at least 1")]
    NoTimeSteps,
    #[error("horizon T must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("nodes must be finite and strictly increasing (violated at index {0})")]
    NodesNotIncreasing(usize),
    #[error("volatility band requires 0 < sigma_low <= sigma_high, got ({low}, {high})")]
    BadBand { low: f64, high: f64 },
    #[error("smoothing index n must be a positive integer")]
    BadSmoothingIndex,
    #[error("tabulated initial data has {got} values, grid has {expected} nodes")]
    TabulatedLength { expected: usize, got: usize },
    #[error("initial data is not finite at node {index} (x = {x})")]
    NonFiniteInitial { index: usize, x: f64 },
    #[error("{side} boundary value is not finite at t = {t}")]
    NonFiniteBoundary { side: &'static str, t: f64 },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("perturbation must be non-negative, got {0}")]
    NegativePerturbation(f64),
    #[error("field and problem live on different grids")]
    GridMismatch,
    #[error("x = {x} lies outside the domain [{a}, {b}]")]
    OutOfDomain { x: f64, a: f64, b: f64 },
    #[error("{0}")]
    Other(String),
}

/// Failure while marching the implicit scheme.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("zero pivot in tridiagonal solve at row {row}")]
    ZeroPivot { row: usize },
    #[error(
        "policy iteration did not converge at time index {time_index} after {iterations} \
         iterations; policy still switching at nodes {oscillating_nodes:?}"
    )]
    NonConvergence {
        time_index: usize,
        iterations: usize,
        oscillating_nodes: Vec<usize>,
    },
}
