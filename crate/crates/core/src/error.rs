use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Linear-solver failures. Breakdown and non-convergence are kept apart so
/// callers can tell a broken constraint set from a hard system.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("factorization broke down: operator is not positive definite on the constrained space")]
    NotPositiveDefinite,
    #[error("conjugate gradients did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },
    #[error("dimension mismatch: operator has {expected} rows, right-hand side has {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Where a non-invertible deformation gradient was found.
#[derive(Debug, Clone, PartialEq)]
pub struct DegenerateDeformation {
    pub j0: f64,
    pub j_min: f64,
    /// Cell-grid quadrature point index and its coordinates.
    pub cell_point: usize,
    pub y: [f64; 2],
    pub t: Option<f64>,
    /// Macro quadrature point index and coordinates, when known.
    pub macro_point: Option<(usize, [f64; 2])>,
}

impl fmt::Display for DegenerateDeformation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "det F0 = {:.6e} <= j_min = {:.1e} at cell point {} y = ({:.6}, {:.6})", self.j0, self.j_min, self.cell_point, self.y[0], self.y[1])?;
        if let Some(t) = self.t {
            write!(f, ", t = {t}")?;
        }
        if let Some((q, x)) = self.macro_point {
            write!(f, ", macro quadrature point {q} x = ({:.6}, {:.6})", x[0], x[1])?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("coefficient is not symmetric positive definite at element {element}, quadrature point {point} (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefiniteCoefficient { element: usize, point: usize, min_eigenvalue: f64 },
    #[error("non-positive weight {value:.3e} at element {element}, quadrature point {point}")]
    NonPositiveWeight { element: usize, point: usize, value: f64 },
    #[error("inconsistent constraint on dof {dof}: {reason}")]
    InconsistentConstraint { dof: usize, reason: String },
    #[error("{context}: {source}")]
    Solve { context: String, source: SolveError },
    #[error("degenerate deformation: {0}")]
    DegenerateDeformation(Box<DegenerateDeformation>),
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn solve(context: impl Into<String>, source: SolveError) -> Self {
        Error::Solve { context: context.into(), source }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_degenerate_deformation(&self) -> bool {
        matches!(self.root(), Error::DegenerateDeformation(_))
    }
}

impl From<DegenerateDeformation> for Error {
    fn from(d: DegenerateDeformation) -> Self {
        Error::DegenerateDeformation(Box::new(d))
    }
}
