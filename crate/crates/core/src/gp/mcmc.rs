//! Adaptive random-walk Metropolis over log-hyperparameters.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::kernel::GpHyper;
use super::model::{log_posterior, GpModel, Normalization};
use super::prior::HyperPrior;
use crate::error::{Error, Result};
use crate::sampling;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_steps: usize,
    pub n_burn: usize,
    pub n_keep: usize,
    pub seed: u64,
    /// Hold λ at this value instead of sampling it.
    #[serde(default)]
    pub fixed_lambda: Option<f64>,
    /// Standardize inputs and center the output before fitting.
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_target")]
    pub target_accept: f64,
}

fn default_true() -> bool {
    true
}

fn default_target() -> f64 {
    0.25
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_steps: 5000,
            n_burn: 2000,
            n_keep: 50,
            seed: 0,
            fixed_lambda: None,
            normalize: true,
            target_accept: 0.25,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps <= self.n_burn {
            return Err(Error::config("n_steps must exceed n_burn"));
        }
        if self.n_keep == 0 || self.n_keep > self.n_steps - self.n_burn {
            return Err(Error::config("n_keep must be in 1..=n_steps-n_burn"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub final_scale: f64,
    #[serde(default)]
    pub warning: Option<String>,
}

struct Layout {
    d: usize,
    fixed_lambda: Option<f64>,
}

impl Layout {
    fn len(&self) -> usize {
        self.d + 1 + usize::from(self.fixed_lambda.is_none())
    }

    fn to_hyper(&self, u: &[f64]) -> GpHyper {
        GpHyper {
            sigma: u[0].exp(),
            beta: u[1..=self.d].iter().map(|v| v.exp()).collect(),
            lambda: self.fixed_lambda.unwrap_or_else(|| u[self.d + 1].exp()),
        }
    }

    fn start(&self, prior: &HyperPrior) -> (Vec<f64>, Vec<f64>) {
        let mut u = vec![prior.sigma.mu];
        let mut sd = vec![prior.sigma.sd];
        for b in &prior.beta {
            u.push(b.mu);
            sd.push(b.sd);
        }
        if self.fixed_lambda.is_none() {
            u.push(prior.lambda.mu);
            sd.push(prior.lambda.sd);
        }
        (u, sd)
    }
}

/// Target density in log space: log posterior plus the log-Jacobian `Σ u`
/// of the sampled coordinates.
fn log_target(x: &Array2<f64>, y: &Array1<f64>, prior: &HyperPrior, lay: &Layout, u: &[f64]) -> f64 {
    if u.iter().any(|v| !v.is_finite() || v.abs() > 30.0) {
        return f64::NEG_INFINITY;
    }
    let h = lay.to_hyper(u);
    match log_posterior(x.view(), y.view(), &h, prior) {
        Ok(lp) if lp.is_finite() => lp + u.iter().sum::<f64>(),
        _ => f64::NEG_INFINITY,
    }
}

/// Fit a GP by sampling its hyperparameter posterior.
///
/// Proposal steps are Gaussian in log space. During burn-in the global step
/// scale is tuned toward `target_accept` in windows of 50 steps, and halfway
/// through burn-in the per-coordinate step sizes are reset to the chain's
/// empirical spread. After burn-in the kernel is fixed and `n_keep` draws
/// are retained at even spacing.
pub fn mcmc_fit(x: Array2<f64>, y: Array1<f64>, prior: &HyperPrior, cfg: &McmcConfig) -> Result<GpModel> {
    cfg.validate()?;
    prior.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::shape("inputs and outputs have different row counts"));
    }
    if prior.dim() != x.ncols() {
        return Err(Error::shape(format!(
            "prior has {} length scales, inputs have {} columns",
            prior.dim(),
            x.ncols()
        )));
    }
    let norm = if cfg.normalize {
        Normalization::fit(x.view(), y.view())
    } else {
        Normalization::identity(x.ncols())
    };
    let xn = norm.x_to(x.view());
    let yc = y.mapv(|v| v - norm.y_mean);
    let lay = Layout {
        d: x.ncols(),
        fixed_lambda: cfg.fixed_lambda,
    };
    let p = lay.len();
    let mut rng = sampling::rng(cfg.seed);

    let (mut u, mut step_sd) = lay.start(prior);
    let mut cur = log_target(&xn, &yc, prior, &lay, &u);
    if !cur.is_finite() {
        return Err(Error::numeric("log posterior is not finite at the prior median"));
    }
    let mut scale = 2.38 / (p as f64).sqrt();
    let window = 50usize;
    let mut win_acc = 0usize;
    let mut post_acc = 0usize;
    let mut trace: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_burn / 2);
    let post = cfg.n_steps - cfg.n_burn;
    let keep_at: Vec<usize> = (0..cfg.n_keep)
        .map(|i| cfg.n_burn + ((i + 1) * post) / cfg.n_keep - 1)
        .collect();
    let mut keep_iter = keep_at.iter().peekable();
    let mut kept = Vec::with_capacity(cfg.n_keep);
    let mut kept_lp = Vec::with_capacity(cfg.n_keep);
    let mut prop = vec![0.0; p];

    for step in 0..cfg.n_steps {
        for j in 0..p {
            prop[j] = u[j] + scale * step_sd[j] * sampling::normal(&mut rng);
        }
        let cand = log_target(&xn, &yc, prior, &lay, &prop);
        let accept = cand.is_finite() && (cand - cur >= 0.0 || rng.random::<f64>().ln() < cand - cur);
        if accept {
            u.copy_from_slice(&prop);
            cur = cand;
        }
        if step < cfg.n_burn {
            win_acc += usize::from(accept);
            if (step + 1) % window == 0 {
                let rate = win_acc as f64 / window as f64;
                scale *= (1.5 * (rate - cfg.target_accept)).exp();
                win_acc = 0;
            }
            if step >= cfg.n_burn / 4 {
                trace.push(u.clone());
            }
            if step + 1 == cfg.n_burn / 2 && trace.len() >= 20 {
                for j in 0..p {
                    let m = trace.iter().map(|t| t[j]).sum::<f64>() / trace.len() as f64;
                    let v = trace.iter().map(|t| (t[j] - m).powi(2)).sum::<f64>() / trace.len() as f64;
                    if v.sqrt() > 1e-3 {
                        step_sd[j] = v.sqrt();
                    }
                }
                scale = 2.38 / (p as f64).sqrt();
            }
        } else {
            post_acc += usize::from(accept);
        }
        if keep_iter.peek() == Some(&&step) {
            keep_iter.next();
            kept.push(lay.to_hyper(&u));
            // store the log posterior in φ space, without the Jacobian
            kept_lp.push(cur - u.iter().sum::<f64>());
        }
    }

    let acceptance_rate = post_acc as f64 / post as f64;
    let warning = if !(0.05..=0.7).contains(&acceptance_rate) {
        let w = format!("acceptance rate {acceptance_rate:.3} outside [0.05, 0.7]");
        log::warn!("{w}");
        Some(w)
    } else {
        None
    };
    let diag = McmcDiagnostics {
        acceptance_rate,
        final_scale: scale,
        warning,
    };
    GpModel::from_parts(x, y, norm, kept, Some(kept_lp), prior.clone(), Some(diag))
}
