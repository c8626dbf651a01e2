//! Two-fidelity surrogate: a GP on low-fidelity data plus a GP on the
//! high-fidelity discrepancy, and cost-aware adaptive sampling.

mod acquisition;
mod dataset;
mod model;

pub use acquisition::{
    adaptive_select, adaptive_select_weighted, candidate_pool, run_adaptive, AcquisitionResult, AdaptiveConfig,
    AdaptiveOutcome, RoundRecord,
};
pub use dataset::{equivalent_cost, Dataset, Fidelity, DEFAULT_COST_RATIO};
pub use model::{mf_cov, mfgp_fit, MfSurrogate, MfgpConfig, MfgpModel, MfgpModelDoc};
