use thiserror::Error;

/// Errors raised by geometry construction, assembly and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("invalid patch: {0}")]
    InvalidPatch(String),

    #[error("point ({u}, {v}) lies outside element {element:?}")]
    OutsideElement { u: f64, v: f64, element: (usize, usize) },

    #[error("singular geometry map at ({u}, {v}): det J = {det:e}")]
    SingularJacobian { u: f64, v: f64, det: f64 },

    #[error("quadrature point count {0} outside 1..=20")]
    QuadratureOrder(usize),

    #[error("inconsistent problem data: {0}")]
    Problem(String),

    #[error("subscale block of element {element} is singular (condition estimate {condition:e})")]
    SingularSubscaleBlock { element: usize, condition: f64 },

    #[error("singular system: zero pivot at row {row} (pivot magnitude {pivot:e}, matrix scale {scale:e})")]
    SingularSystem { row: usize, pivot: f64, scale: f64 },

    #[error("recovery data does not match the solution ({0})")]
    StaleRecovery(String),

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
