//! Single-fidelity GP regression with a squared-exponential kernel and
//! fully Bayesian hyperparameters.
//!
//! Each output is modelled by its own zero-mean GP. Hyperparameters
//! `(σ, β, λ)` get independent log-normal priors and are sampled by
//! adaptive random-walk Metropolis; predictions average over the retained
//! draws.

mod kernel;
mod mcmc;
mod model;
mod prior;

pub use kernel::{build_cov, cross_cov, factor_cov, kernel_eval, GpHyper, JITTER_MAX, JITTER_START};
pub use mcmc::{mcmc_fit, McmcConfig, McmcDiagnostics};
pub use model::{log_posterior, GpModel, GpModelDoc, Normalization, PredictMode};
pub use prior::{HyperPrior, LogNormal};
