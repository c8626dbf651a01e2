use serde::{Deserialize, Serialize};

use super::GpHyper;
use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log-normal density parameterized by mean and std of the log value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub mu: f64,
    pub sd: f64,
}

impl LogNormal {
    pub fn new(median: f64, sd: f64) -> Self {
        LogNormal { mu: median.ln(), sd }
    }

    pub fn ln_pdf(&self, v: f64) -> f64 {
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        let z = (v.ln() - self.mu) / self.sd;
        -0.5 * z * z - self.sd.ln() - LN_SQRT_2PI - v.ln()
    }
}

/// Independent log-normal priors on σ, each β_j and λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPrior {
    pub sigma: LogNormal,
    pub beta: Vec<LogNormal>,
    pub lambda: LogNormal,
}

impl HyperPrior {
    /// Weakly informative defaults for standardized inputs: median 1 for σ
    /// and every β, median 0.1 for λ, log-std 1 throughout.
    pub fn default_for(d: usize) -> Self {
        HyperPrior {
            sigma: LogNormal::new(1.0, 1.0),
            beta: vec![LogNormal::new(1.0, 1.0); d],
            lambda: LogNormal::new(0.1, 1.0),
        }
    }

    /// Same as [`HyperPrior::default_for`] but with β medians set to
    /// `beta_median`; useful in high dimension where a unit length scale
    /// per coordinate makes every pair of points nearly uncorrelated.
    pub fn with_beta_median(d: usize, beta_median: f64) -> Self {
        HyperPrior {
            beta: vec![LogNormal::new(beta_median, 1.0); d],
            ..HyperPrior::default_for(d)
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma.sd > 0.0 && self.lambda.sd > 0.0 && self.beta.iter().all(|b| b.sd > 0.0);
        if !ok {
            return Err(Error::config("prior standard deviations must be positive"));
        }
        Ok(())
    }

    pub fn ln_density(&self, h: &GpHyper) -> f64 {
        self.sigma.ln_pdf(h.sigma)
            + self
                .beta
                .iter()
                .zip(&h.beta)
                .map(|(p, &b)| p.ln_pdf(b))
                .sum::<f64>()
            + self.lambda.ln_pdf(h.lambda)
    }

    /// Hyperparameters at the prior medians.
    pub fn median(&self) -> GpHyper {
        GpHyper {
            sigma: self.sigma.mu.exp(),
            beta: self.beta.iter().map(|b| b.mu.exp()).collect(),
            lambda: self.lambda.mu.exp(),
        }
    }
}
