use thiserror::Error;

/// Errors produced by the modelling, fitting and inference routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate interval [{lo}, {hi}]")]
    DegenerateInterval { lo: f64, hi: f64 },

    #[error("at least one interior knot is required")]
    NoInteriorKnots,

    #[error("quadrature order must be at least 1")]
    InvalidQuadratureOrder,

    #[error("point {x} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid realization: {0}")]
    InvalidRealization(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("latent covariance is not positive definite")]
    NotPositiveDefinite,

    #[error("vectors are linearly dependent (rank deficiency at vector {index})")]
    RankDeficient { index: usize },

    #[error("component {index} has no coefficient above tolerance")]
    DegenerateComponent { index: usize },

    #[error("posterior mode search did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    ModeNotConverged { iterations: usize, grad_norm: f64 },

    #[error("negative Hessian at the mode is not positive definite")]
    SaddlePoint,

    #[error("constraint Jacobian has rank {rank}, expected {expected}")]
    JacobianRank { rank: usize, expected: usize },

    #[error("projected Fisher information is singular: numerical rank {rank} of {dim} (n = {n} subjects)")]
    SingularFisher { rank: usize, dim: usize, n: usize },

    #[error("cross-validation failed: {0}")]
    CrossValidation(String),

    #[error("simulation failed: {0}")]
    Simulation(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
