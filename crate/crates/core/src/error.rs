use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("grid too coarse: axis {axis} has n = {n}, at least 4 cells are required")]
    GridTooCoarse { axis: usize, n: usize },

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("model is not uniformly elliptic: smallest eigenvalue of a is {min_eigenvalue:e} at node {node} {coords:?}")]
    NotElliptic {
        node: usize,
        coords: Vec<f64>,
        min_eigenvalue: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("matrix is singular to working precision at pivot {0}")]
    Singular(usize),

    #[error("inverse iteration did not converge in {iterations} iterations (last eigenvalue change {last_change:e}, residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        residual: f64,
    },

    #[error("principal eigenvector has mixed signs ({negative} of {total} entries negative); max Peclet number {peclet:.3}")]
    MixedSign {
        negative: usize,
        total: usize,
        peclet: f64,
    },

    #[error(
        "eigenvalue mismatch: generator {generator}, adjoint {adjoint}, allowance {allowance:e}"
    )]
    EigenvalueMismatch {
        generator: f64,
        adjoint: f64,
        allowance: f64,
    },

    #[error("field must be strictly positive on interior nodes; node {node} has value {value:e}")]
    NonPositive { node: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
