use thiserror::Error;

use crate::sdp::SdpStatus;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("dimension {dim} exceeds the supported maximum of {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("eigenvalue iteration did not converge")]
    ConvergenceFailure,

    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not Hermitian")]
    NotHermitian,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("interval bound violated at ({row}, {col}): lower {lower} > upper {upper}")]
    BoundViolation {
        row: usize,
        col: usize,
        lower: f64,
        upper: f64,
    },

    #[error("uncertainty realization leaves the unit box (|{value}| > 1)")]
    OutOfUnitBox { value: f64 },

    #[error("{count} uncertain coordinates give more than 2^24 vertices")]
    TooManyVertices { count: usize },

    #[error("fractional order {alpha} is outside {range}")]
    AlphaOutOfRange { alpha: f64, range: &'static str },

    #[error("ill-formed LMI problem: {0}")]
    IllFormedProblem(String),

    #[error("value vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("SDP solver failure: {0}")]
    SolverFailure(String),

    #[error("LMI problem is not strictly feasible (solver status {0:?})")]
    Infeasible(SdpStatus),

    #[error("certificate block is singular (condition number {cond:e})")]
    SingularCertificate { cond: f64 },

    #[error("simulation step matrix I - h^alpha A is singular")]
    SingularStep,

    #[error("step size too large: {0}")]
    StepTooLarge(String),

    #[error("argument {z} outside the supported domain |z| <= {max}")]
    DomainTooLarge { z: f64, max: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
