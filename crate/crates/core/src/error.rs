use num_complex::Complex64;
use thiserror::Error;

/// Errors produced by samplers, solvers and formula evaluators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A formula was evaluated outside the region where it is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("fixed-point solve did not converge at z = {z}, t = {t} (residual {residual:.3e} after {iterations} iterations)")]
    NonConvergence {
        z: Complex64,
        t: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("pole: 1 - t*S0 = {denominator} at z = {z}, z~ = {z_tilde}")]
    Pole {
        z: Complex64,
        z_tilde: Complex64,
        denominator: Complex64,
    },

    #[error("eigendecomposition failed for {context}")]
    Eigen { context: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("{aborted} of {trials} trials aborted (first: {first})")]
    TrialsAborted {
        aborted: usize,
        trials: usize,
        first: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
