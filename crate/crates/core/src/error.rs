use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    Lattice(String),
    #[error("ball wraps torus: radius {radius} with side {side}")]
    BallWrapsTorus { radius: f64, side: usize },
    #[error("degenerate conductance: {value} on edge {edge}")]
    DegenerateConductance { edge: usize, value: f64 },
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("time {time} outside field support [{start}, {end})")]
    OutsideSupport { time: f64, start: f64, end: f64 },
    #[error("shift {0} is not aligned with the time grid")]
    UnalignedShift(f64),
    #[error("invalid exponent: {0}")]
    Exponent(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("field is not periodic in time")]
    NotPeriodic,
    #[error("field is not constant in time")]
    NotTimeConstant,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("condition violated: {what} (margin {margin:e})")]
    Condition { what: String, margin: f64 },
    #[error("support violation: {0}")]
    Support(String),
    #[error("not a solution: residual {residual:e} exceeds {tol:e}")]
    NotASolution { residual: f64, tol: f64 },
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
