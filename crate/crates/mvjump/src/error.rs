use thiserror::Error;

/// Errors produced by the solver pipeline.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A market model invariant is violated.
    #[error("invalid model: {0}")]
    Model(String),

    /// A time argument falls outside the valid interval.
    #[error("time {t} outside [{lo}, {hi}]")]
    Domain { t: f64, lo: f64, hi: f64 },

    /// The volatility vanishes where a formula divides by sigma^2.
    #[error("degenerate volatility: sigma(t) = 0 at t = {t}")]
    DegenerateVolatility { t: f64 },

    /// The integrator produced a non-finite value.
    #[error("integration overflow at step {step} (t = {t})")]
    Integration { step: usize, t: f64 },

    /// A grid of P values contains a non-positive node.
    #[error("P(t) <= 0 at node {index}; cannot divide")]
    NonPositiveP { index: usize },

    /// The affine fixed-point map for the wealth shift has unit slope.
    #[error("singular embedding: affine map slope {slope} leaves no fixed point")]
    SingularEmbedding { slope: f64 },

    /// A variance came out below the numerical-noise floor.
    #[error("negative variance {value} at t = {t}")]
    NegativeVariance { t: f64, value: f64 },

    /// Simulation configuration is inconsistent with the model horizon.
    #[error("simulation config: {0}")]
    SimConfig(String),

    /// Grid specification is unusable.
    #[error("grid: {0}")]
    Grid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
