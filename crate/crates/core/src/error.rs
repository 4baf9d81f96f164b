use thiserror::Error;

use crate::spectrum::Parity;

/// Failure modes shared by every layer of the solver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("x = {x} lies within {guard:e} of the pole at n = {n}")]
    PoleProximity { x: f64, n: i64, guard: f64 },

    #[error("series at x = {x} did not converge within {terms} terms")]
    NonConvergence { x: f64, terms: usize },

    #[error("function value is not finite at x = {x}")]
    NonFinite { x: f64 },

    #[error("[{lo}, {hi}] does not bracket a sign change")]
    InvalidBracket { lo: f64, hi: f64 },

    #[error("{parity} sector captured weight {weight:.10} is below {required}; raise x_max")]
    InsufficientWeight { parity: Parity, weight: f64, required: f64 },

    #[error("w-series tail bound {bound:.3e} exceeds tolerance with {terms} terms at |w| = {abs_w}")]
    TailBoundExceeded { terms: usize, bound: f64, abs_w: f64 },

    #[error("quadrature did not converge: {coarse:e} (coarse) vs {fine:e} (refined)")]
    QuadratureNotConverged { coarse: f64, fine: f64 },

    #[error("representation unavailable: {0}")]
    Representation(String),

    #[error("x = {x} satisfies the Juddian condition; exceptional eigenstates are not constructed")]
    Juddian { x: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
