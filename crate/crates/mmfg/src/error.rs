//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`] so callers (in particular the
//! CLI) can map failures onto a small set of exit classes: configuration /
//! validation problems, numerical non-convergence, and I/O. Variants carry
//! enough context to be actionable — residual histories for non-convergence,
//! step indices for divergence, offending sizes for shape mismatches.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An ensemble with zero particles was supplied.
    #[error("ensemble must contain at least one particle")]
    EmptyEnsemble,

    /// Particles (or ensembles) of different dimensions were mixed.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Two ensembles that must share a particle count do not.
    #[error("particle count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },

    /// Two flows or grids that must coincide do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A non-finite value was encountered where finite data is required.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    /// A division by an ensemble mean whose magnitude is below the floor.
    #[error("singular mean: |{value:e}| below floor {floor:e}")]
    SingularMean { value: f64, floor: f64 },

    /// A strategy value made a coefficient singular (e.g. division by α₀²).
    #[error("singular control: |alpha0| = {value:e} below floor {floor:e}")]
    SingularControl { value: f64, floor: f64 },

    /// The λ-summary lacks a statistic the model coefficients read.
    #[error("lambda summary is missing required statistic `{0}`")]
    MissingStatistic(&'static str),

    /// Invalid configuration or invalid model/operation inputs.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The projected-gradient minimizer did not reach the gradient tolerance.
    #[error(
        "optimization failed after {iterations} iterations \
         (projected-gradient norm {gradient_norm:e}, last iterate {iterate:e})"
    )]
    OptimizationFailure {
        iterations: usize,
        gradient_norm: f64,
        iterate: f64,
    },

    /// The averaged major Hamiltonian is not numerically separable in
    /// (α₀, α); the split minimization would be unsound.
    #[error("major Hamiltonian not separable: cross-partial {cross:e} exceeds {tol:e}")]
    SeparabilityViolation { cross: f64, tol: f64 },

    /// Forward simulation produced a non-finite state.
    #[error("forward simulation diverged at step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    /// The regression basis cannot be identified from the data.
    #[error(
        "degenerate regression basis: {rows} rows for {basis} basis functions; \
         lower the polynomial degree"
    )]
    BasisDegeneracy { rows: usize, basis: usize },

    /// The inner Picard iteration on strategies did not converge.
    #[error("Picard iteration did not converge after {iterations} iterations \
             (last residual {last:e}, tol {tol:e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        tol: f64,
        residuals: Vec<f64>,
    },

    /// The outer fixed-point iteration on the measure flow did not converge.
    #[error("measure fixed point did not converge after {iterations} outer iterations \
             (last residual {last:e}, fp_tol {tol:e})")]
    FixedPointFailure {
        iterations: usize,
        last: f64,
        tol: f64,
        residuals: Vec<f64>,
    },

    /// The model does not declare a deterministic mean-field reduction.
    #[error("model `{0}` does not declare a deterministic mean-field reduction")]
    NotReducible(String),

    /// The model has no closed-form oracle to verify against.
    #[error("model `{0}` has no analytic oracle")]
    NoOracle(String),
}

impl Error {
    /// Residual history attached to a non-convergence error, if any.
    #[must_use]
    pub fn residuals(&self) -> Option<&[f64]> {
        match self {
            Error::NonConvergence { residuals, .. }
            | Error::FixedPointFailure { residuals, .. } => Some(residuals),
            _ => None,
        }
    }
}
