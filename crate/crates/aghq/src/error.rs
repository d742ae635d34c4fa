use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the inference library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("quadrature level {level} exceeds the supported maximum {max}")]
    LevelTooLarge { level: usize, max: usize },

    #[error("product grid would need {points} points, exceeding the budget of {budget}")]
    PointBudgetExceeded { points: u128, budget: u64 },

    #[error("Hermite root-finding did not converge at level {level}: residual {residual:e}")]
    RootFinding { level: usize, residual: f64 },

    #[error("non-finite function value while differencing coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },

    #[error(
        "inner optimisation did not converge after {iterations} iterations \
         (gradient infinity-norm {grad_norm:e})"
    )]
    InnerNotConverged { iterations: usize, grad_norm: f64 },

    #[error("node {node}: {source}")]
    NodeFit {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix not positive definite in {context} at theta = {theta:?}; {hint}")]
    NotPositiveDefinite {
        context: String,
        theta: Vec<f64>,
        hint: String,
    },

    #[error(
        "outer optimisation did not converge after {iterations} iterations; \
         trace (last entries): {trace}"
    )]
    OuterNotConverged { iterations: usize, trace: String },

    #[error("evaluation budget exhausted: {calls} log-joint calls, limit {max}")]
    BudgetExhausted { calls: u64, max: u64 },

    #[error(
        "all proposals rejected during warmup (acceptance {acceptance:e}, \
         proposal scale {scale:e}); the target may be degenerate at the initial point"
    )]
    AllRejected { acceptance: f64, scale: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
