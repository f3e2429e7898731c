//! Quantile Bayesian VAR with a factor error structure.
//!
//! For a quantile level `q` the model is
//!
//! ```text
//! y_t = Φ_q x_t + Λ_q f_t + θ(q) z_t + ε_t,
//! ε_t ~ N(0, τ²(q) diag(z_t) Σ_q),  z_it ~ Exp(1),  f_t ~ N(0, I_r)
//! ```
//!
//! with a horseshoe prior on the entries of `Φ_q`, `N(0, V_λ)` loadings and
//! inverse-gamma scales. [`run_chain`] runs the Gibbs sampler; the individual
//! conditional updates live in [`steps`].

mod chain;
mod config;
mod draws;
mod quantile;
mod state;
pub mod steps;

pub use chain::{run_chain, run_sampler, SamplerSpec};
pub use config::{CoefficientPrior, McmcSchedule, PriorConfig, QbvarConfig};
pub use draws::{
    read_draws, write_draws, ChainDiagnostics, DrawKey, DrawSetMeta, PosteriorDraw,
    PosteriorDrawSet,
};
pub use quantile::QuantileLevel;
pub use state::QbvarState;
pub use steps::{ErrorModel, SigmaUpdate, Z_FLOOR};

#[cfg(test)]
mod tests;
