//! Continuous-time mean-variance portfolio selection under jump-diffusion
//! dynamics with recursive utility.
//!
//! The pipeline: a [`market::MarketModel`] fixes the coefficients; the
//! [`odes`] layer solves the scalar backward equations behind the optimal
//! feedback law (via two independent routes that must agree) and the forward
//! moment equations; [`control`] evaluates feedback laws, adjoint processes,
//! and the value function, and cross-verifies the two routes; [`frontier`]
//! resolves the embedding scalars and traces efficient frontiers; [`sim`]
//! validates every closed form by jump-diffusion Monte Carlo; [`verify`]
//! bundles the whole invariant suite into one reproducible report.

pub mod control;
pub mod error;
pub mod frontier;
pub mod grid;
pub mod market;
pub mod odes;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{GridSpec, SolutionGrid};
pub use market::{JumpMark, MarketModel, PiecewiseConstantFn};
pub use odes::EmbeddingParams;
