//! Bayesian hierarchical meta-analysis with empirical-determinacy measures.
//!
//! This crate fits normal-normal hierarchical models (and a handful of
//! related model families) with its own MCMC engine, and quantifies how
//! strongly the observed data determine each marginal posterior. The total
//! empirical determinacy (TED) of a parameter is the negated second
//! derivative, with respect to the likelihood weight, of the Bhattacharyya
//! coefficient between the base posterior and the likelihood-weighted
//! posterior. TED splits exactly into a location part (EDL) and a spread
//! part (EDS), reported as proportions pEDL and pEDS.
//!
//! Module map:
//!
//! - [`distributions`] — the prior/likelihood distribution families.
//! - [`models`] — datasets, model definitions, likelihood evaluation.
//! - [`sampler`] — Gibbs/Metropolis MCMC engine plus convergence diagnostics.
//! - [`reweight`] — weighted posterior moments from base-model draws.
//! - [`determinacy`] — Bhattacharyya machinery and the TED/EDL/EDS estimators.
//! - [`rlmc`] — relative latent model complexity and heterogeneity-prior grids.
//! - [`oracle`] — closed-form conjugate/quadrature validators used by tests
//!   and the `oracle-check` command.

pub mod determinacy;
pub mod distributions;
pub mod error;
pub mod models;
pub mod oracle;
pub mod reweight;
pub mod rlmc;
pub mod rng;
mod roots;
pub mod sampler;
mod stats;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
