//! Simulation and Bayesian inference for a hidden two-compartment model of
//! stem-cell fate decisions.
//!
//! The library covers the full workflow: exact simulation of the hidden
//! process and virtual cohorts ([`simulate`]), data-augmentation MCMC over
//! latent event paths with conjugate rate updates ([`mcmc`]), integrated
//! likelihoods and Bayes factors for choosing among event-set variants
//! ([`evidence`]), simulation-based model assessment ([`assess`]), and
//! posterior diagnostics ([`diagnostics`]). Everything random is driven by
//! explicit seeds ([`rng`]); results are pure functions of inputs and seeds.

/// Library version, for run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod assess;
pub mod dataset;
pub mod diagnostics;
pub mod evidence;
pub mod mcmc;
pub mod model;
pub mod rng;
pub mod simulate;
