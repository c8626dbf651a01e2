//! Probabilistic inverse design.
//!
//! Two-step pipeline: a probabilistic forward surrogate (single- and
//! two-fidelity Gaussian processes with MCMC-sampled hyperparameters, PCA
//! output reduction, cost-aware adaptive sampling) followed by an explicit
//! inverse surrogate (a conditional invertible network of affine coupling
//! blocks) that draws whole families of designs for a requested target.
//!
//! Module map:
//!
//! - [`numcore`]: dense networks with exact reverse-mode gradients, Adam, LR schedules.
//! - [`gp`]: squared-exponential GP regression with Metropolis hyperparameter sampling.
//! - [`mfgp`]: two-fidelity Kennedy–O'Hagan surrogate, datasets, adaptive sampling.
//! - [`reduce`]: PCA codec for profile outputs.
//! - [`cinn`]: conditional invertible network, training and inversion.
//! - [`problems`]: toy quadratic, synthetic fidelity pair, blade-like generator.
//! - [`harness`]: metrics, experiments, artifacts and the CLI.

pub mod cinn;
pub mod error;
pub mod gp;
pub mod harness;
pub mod linalg;
pub mod mfgp;
pub mod numcore;
pub mod par;
pub mod problems;
pub mod reduce;
pub mod sampling;

pub use error::{Error, Result};

/// Version tag written into every serialized document.
pub const SCHEMA_VERSION: u32 = 1;
