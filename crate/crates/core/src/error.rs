//! Error type shared by every module in the crate.

use num_complex::Complex64;

/// Everything that can go wrong outside of plain bugs.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// The principal square root (or logarithm) was requested on its branch cut.
    #[error("branch cut: {context}")]
    BranchCut { context: String },

    /// A resolvent was evaluated at (or numerically on top of) its pole.
    #[error("resolvent pole hit at u = {u}")]
    PoleHit { u: Complex64 },

    /// Invalid model parameters (slice geometry, momenta out of range, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Adaptive quadrature could not reach the requested tolerance.
    #[error("quadrature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    QuadratureNoConverge { achieved: f64, requested: f64 },

    /// Cubature / Monte Carlo integration error estimate too large.
    #[error("cubature did not converge: achieved {achieved:.3e}, requested {requested:.3e}")]
    CubatureNoConverge { achieved: f64, requested: f64 },

    /// A hard combinatorial size cap was exceeded.
    #[error("cap exceeded: {what} = {got}, cap {cap}")]
    CapExceeded {
        what: &'static str,
        got: usize,
        cap: usize,
    },

    /// A matrix that must be positive semidefinite is not.
    #[error("matrix not positive semidefinite: min eigenvalue {min_eigenvalue:.3e}")]
    NotPsd { min_eigenvalue: f64 },

    /// A Grassmann monomial with unequal numbers of barred and unbarred generators.
    #[error("unbalanced Grassmann monomial: {barred} barred vs {unbarred} unbarred")]
    UnbalancedMonomial { barred: usize, unbarred: usize },

    /// A generator appears twice in a Grassmann monomial.
    #[error("nilpotent square: generator repeated in monomial")]
    RepeatedGenerator,

    /// Requested series order above the supported cap.
    #[error("series order {got} above cap {cap}")]
    OrderTooHigh { got: usize, cap: usize },

    /// Pade denominator degenerate (singular or near-singular linear system).
    #[error("degenerate Pade system: {0}")]
    DegeneratePade(String),

    /// A linear solve or coefficient extraction was too ill-conditioned to trust.
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    /// The resolvent bound was violated; carries the witness sample.
    #[error("resolvent bound violated at sigma = {sigma}, p = {p}: |R^-1| = {norm} > {bound}")]
    BoundViolated {
        sigma: f64,
        p: u32,
        norm: f64,
        bound: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
