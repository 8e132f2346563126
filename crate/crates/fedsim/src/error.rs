//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by problem construction, sampling, simulation and checkers.
#[derive(Debug, Error)]
pub enum FedError {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Vector dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The weighted mean gradient is numerically zero, so the gradient
    /// diversity ratio is meaningless. Carries the numerator so callers can
    /// still see the weighted local-gradient mass at the probe point.
    #[error("degenerate gradient diversity: weighted mean gradient below floor (numerator {numerator:.3e})")]
    DegenerateDiversity { numerator: f64 },

    /// A matrix fails the structural requirements of a mixing matrix.
    #[error("invalid mixing matrix: {0}")]
    InvalidMixing(String),

    /// The mixing matrix has spectral gap zero (second eigenvalue magnitude
    /// indistinguishable from one), so gossip never contracts disagreement.
    #[error("disconnected topology: zeta = {zeta} is not strictly below 1")]
    DisconnectedTopology { zeta: f64 },

    /// An iterate or direction left the finite range during simulation.
    #[error("numerical divergence at iteration {t} on device {device}")]
    NumericalDivergence { t: usize, device: usize },

    /// Not enough usable records to fit a convergence rate.
    #[error("rate fit unavailable: {0}")]
    RateFitUnavailable(String),
}

pub type Result<T> = std::result::Result<T, FedError>;

impl FedError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        FedError::InvalidArgument(msg.into())
    }
}
