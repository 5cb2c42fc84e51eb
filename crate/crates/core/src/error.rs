use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    Invalid { name: String, reason: String },

    #[error("ball of radius {radius} centred at ({x}, {y}) is not contained in the grid")]
    OutsideGrid { x: f64, y: f64, radius: f64 },

    #[error("node ({i}, {j}) lies on the grid boundary")]
    BoundaryNode { i: usize, j: usize },

    #[error("radius {radius} is below the reliable quadrature scale {minimum}")]
    RadiusTooSmall { radius: f64, minimum: f64 },

    #[error("vanishing trace on the sphere of radius {radius} around ({x}, {y})")]
    VanishingTrace { x: f64, y: f64, radius: f64 },

    #[error("value {value} at node {index} violates u >= 0")]
    NegativeValue { index: usize, value: f64 },

    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },

    #[error("ball around ({x}, {y}) of radius {radius} carries no mass")]
    EmptyBall { x: f64, y: f64, radius: f64 },

    #[error("symmetry dimension {j} exceeds n - 1 = 1")]
    SymmetryDimension { j: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
