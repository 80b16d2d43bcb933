use thiserror::Error;

/// Errors raised by the numerical library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension {0} is not supported (expected 1 or 2)")]
    UnsupportedDimension(usize),
    #[error("degenerate domain box on axis {axis}: [{lower}, {upper}]")]
    DegenerateBox { axis: usize, lower: f64, upper: f64 },
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("size mismatch: expected {expected} values, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("profile support exits the domain: {0}")]
    SupportExitsDomain(String),
    #[error("non-finite value in slice {slice}")]
    NonFinite { slice: usize },
    #[error("inverse map did not converge at node {node} after {iterations} iterations")]
    InversionFailed { node: usize, iterations: usize },
    #[error("map is not orientation preserving at node {node} (jacobian {jacobian})")]
    NotDiffeomorphism { node: usize, jacobian: f64 },
    #[error("conjugate gradient stalled: residual {residual:e} after {iterations} iterations")]
    CgFailed { iterations: usize, residual: f64 },
    #[error("kinetic energy {value:e} below floor {floor:e} in slice {slice}")]
    SpeedBelowFloor { slice: usize, value: f64, floor: f64 },
    #[error("congestion energy vanishes in slice {slice}")]
    ZeroCongestion { slice: usize },
    #[error("form {form} requires {requirement}")]
    UnsupportedForm { form: &'static str, requirement: &'static str },
    #[error("radius became non-positive at t = {t}")]
    RadiusCollapse { t: f64 },
    #[error("radius path is not monotone near t = {t}")]
    NotMonotone { t: f64 },
    #[error("endpoint masses differ: {m0} vs {m1}")]
    MassMismatch { m0: f64, m1: f64 },
    #[error("post-condition failed: {0}")]
    InvariantViolated(String),
    #[error("curve has zero length")]
    ZeroLength,
    #[error("solver failed: {0}")]
    Solver(String),
}

pub type Result<T> = std::result::Result<T, Error>;
