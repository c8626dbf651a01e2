use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled shrinkage: `p ← p − lr·weight_decay·p` before the Adam delta.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam moment accumulators for an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimState {
    pub fn new(tensor_lens: &[usize], config: AdamConfig) -> Self {
        OptimState {
            config,
            m: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update with bias correction.
    ///
    /// A non-finite gradient rejects the whole step and leaves parameters
    /// and state untouched.
    pub fn adam_step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (t, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[t].len() || g.len() != self.m[t].len() {
                return Err(Error::shape(format!("tensor {t} length mismatch")));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient {} at tensor {t}, element {i}; step rejected",
                    g[i]
                )));
            }
        }
        if !(lr > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let shrink = 1.0 - lr * weight_decay;
        for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[t], &mut self.v[t]);
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] * shrink - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
