use thiserror::Error;

/// Errors raised by the solvers and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid specification mismatch: {0}")]
    SpecMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("region is empty")]
    EmptyRegion,

    #[error("function is not discretely convex at node ({i}, {j}): second difference {value:.3e} below -{tol:.3e}")]
    NotConvex {
        i: usize,
        j: usize,
        value: f64,
        tol: f64,
    },

    #[error("right-hand side must be strictly positive (found {value:.3e} at node {node})")]
    Ellipticity { node: usize, value: f64 },

    #[error("density must be strictly positive (minimum {min:.3e})")]
    Positivity { min: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("compatibility violated: average {average:.12} but expected {expected:.12}")]
    Compatibility { average: f64, expected: f64 },

    #[error("infeasible input: {0}")]
    Infeasible(String),

    #[error("assignment is not cyclically monotone (violating cycle {cycle:?})")]
    NotCyclicallyMonotone { cycle: Vec<usize> },

    #[error("CFL condition violated: dt * max|v| = {courant:.3e} exceeds {limit:.3e}")]
    Cfl { courant: f64, limit: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
