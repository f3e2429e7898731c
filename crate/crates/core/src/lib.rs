//! Quantile Bayesian vector autoregressions with a factor error structure.
//!
//! The crate covers the whole forecasting pipeline:
//!
//! - [`data`]: panel ingestion, transformation codes, deflation, lag designs.
//! - [`dist`]: random-variate kernels used by the Gibbs samplers.
//! - [`qbvar`]: the quantile VAR sampler under an asymmetric-Laplace working
//!   likelihood with horseshoe shrinkage.
//! - [`bvar`]: the Gaussian factor BVAR benchmark sharing the same prior.
//! - [`forecast`]: iterated multi-step path simulation and quantile extraction.
//! - [`eval`]: pinball loss, score tables and ratio tables.
//! - [`combine`]: fixed, performance-based and optimal combination weights.
//! - [`sim`]: synthetic data from known VAR processes.
//! - [`experiment`]: the recursive out-of-sample driver and report writer.

pub mod bvar;
pub mod combine;
pub mod data;
pub mod dist;
pub mod eval;
pub mod experiment;
pub mod forecast;
pub mod qbvar;
pub mod sim;

mod error;

pub use error::{Error, Result};
