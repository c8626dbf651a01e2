//! Forward and inverse accuracy metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} truth values",
            pred.len(),
            truth.len()
        )));
    }
    if truth.len() < 2 {
        return Err(Error::Range("need at least two values".into()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite value in metric input"));
    }
    Ok(())
}

/// RMSE divided by the range of `truth`.
pub fn nrmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let (lo, hi) = truth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return Err(Error::Range("truth has zero range".into()));
    }
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64;
    Ok(mse.sqrt() / (hi - lo))
}

/// Coefficient of determination, `1 − SS_res / SS_tot`. Negative when the
/// prediction is worse than the truth mean.
pub fn r_squared(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::Range("truth is constant".into()));
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// One row of a metric table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub r2: f64,
    pub nrmse: f64,
    /// Mean over targets of the per-target sample std (inverse tables only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
}

impl MetricRow {
    pub fn compute(name: &str, pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(MetricRow {
            name: name.to_string(),
            r2: r_squared(pred, truth)?,
            nrmse: nrmse(pred, truth)?,
            spread: None,
        })
    }
}

/// Median by total order; `NaN` on empty input.
pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear-interpolated quantile, `q ∈ [0, 1]`.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(s.len() - 1);
    s[i] + (pos - i as f64) * (s[j] - s[i])
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}
