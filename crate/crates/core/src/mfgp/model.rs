use std::cmp::Ordering;

use ndarray::{s, Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Fidelity};
use crate::error::{Error, Result};
use crate::gp::{build_cov, cross_cov, mcmc_fit, GpHyper, GpModel, GpModelDoc, HyperPrior, McmcConfig, PredictMode};
use crate::sampling::derive_seed;
use crate::SCHEMA_VERSION;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MfgpConfig {
    /// Defaults to `HyperPrior::default_for(d)`.
    #[serde(default)]
    pub eta_prior: Option<HyperPrior>,
    #[serde(default)]
    pub delta_prior: Option<HyperPrior>,
    #[serde(default)]
    pub mcmc: McmcConfig,
}

impl MfgpConfig {
    fn priors(&self, d: usize) -> (HyperPrior, HyperPrior) {
        (
            self.eta_prior.clone().unwrap_or_else(|| HyperPrior::default_for(d)),
            self.delta_prior.clone().unwrap_or_else(|| HyperPrior::default_for(d)),
        )
    }
}

/// `y(x) = η(x) + δ(x) + ε`, fitted in two stages. ε is carried by δ's nugget.
#[derive(Clone, Debug)]
pub struct MfgpModel {
    pub eta: GpModel,
    pub delta: GpModel,
    /// Output column this model was fitted to.
    pub output: usize,
}

fn cmp_rows(x: &Array2<f64>, y: &Array1<f64>, a: usize, b: usize) -> Ordering {
    for (u, v) in x.row(a).iter().zip(x.row(b).iter()) {
        match u.total_cmp(v) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    y[a].total_cmp(&y[b])
}

/// Rows of one fidelity and one output, in a canonical order so that fits
/// do not depend on row order in the dataset.
fn canonical_subset(ds: &Dataset, f: Fidelity, output: usize) -> (Array2<f64>, Array1<f64>) {
    let idx = ds.rows_of(f);
    let x = ds.x.select(ndarray::Axis(0), &idx);
    let y = Array1::from_iter(idx.iter().map(|&i| ds.y[[i, output]]));
    let mut order: Vec<usize> = (0..idx.len()).collect();
    order.sort_by(|&a, &b| cmp_rows(&x, &y, a, b));
    (
        x.select(ndarray::Axis(0), &order),
        Array1::from_iter(order.iter().map(|&i| y[i])),
    )
}

fn check_counts(ds: &Dataset) -> Result<()> {
    let (nl, nh) = (ds.count(Fidelity::Low), ds.count(Fidelity::High));
    if nl < 2 || nh < 2 {
        return Err(Error::config(format!(
            "two-fidelity fit needs at least 2 rows of each fidelity, got {nl} low and {nh} high"
        )));
    }
    Ok(())
}

fn residuals(eta: &GpModel, xh: &Array2<f64>, yh: &Array1<f64>) -> Result<Array1<f64>> {
    let m = eta.predict_mean_batch(xh.view(), PredictMode::Mixture)?;
    Ok(yh - &Array1::from(m))
}

/// Fit output column `output` of `ds`: η on the low-fidelity rows, then δ on
/// `y − E[η]` at the high-fidelity rows.
pub fn mfgp_fit(ds: &Dataset, output: usize, cfg: &MfgpConfig) -> Result<MfgpModel> {
    ds.validate()?;
    check_counts(ds)?;
    if output >= ds.m() {
        return Err(Error::shape(format!("output {output} out of range for {} columns", ds.m())));
    }
    let (eta_prior, delta_prior) = cfg.priors(ds.d());
    let (xl, yl) = canonical_subset(ds, Fidelity::Low, output);
    let (xh, yh) = canonical_subset(ds, Fidelity::High, output);
    let seed = cfg.mcmc.seed;
    let eta_cfg = McmcConfig {
        seed: derive_seed(seed, 2 * output as u64),
        ..cfg.mcmc.clone()
    };
    let eta = mcmc_fit(xl, yl, &eta_prior, &eta_cfg)?;
    let r = residuals(&eta, &xh, &yh)?;
    let delta_cfg = McmcConfig {
        seed: derive_seed(seed, 2 * output as u64 + 1),
        ..cfg.mcmc.clone()
    };
    let delta = mcmc_fit(xh, r, &delta_prior, &delta_cfg)?;
    MfgpModel::new(eta, delta, output)
}

impl MfgpModel {
    pub fn new(eta: GpModel, delta: GpModel, output: usize) -> Result<Self> {
        if eta.dim() != delta.dim() {
            return Err(Error::shape(format!(
                "eta has {} inputs, delta has {}",
                eta.dim(),
                delta.dim()
            )));
        }
        Ok(MfgpModel {
            eta,
            delta,
            output,
        })
    }

    pub fn dim(&self) -> usize {
        self.eta.dim()
    }

    /// Posterior mean of δ's nugget `λ²`, i.e. the high-fidelity noise variance.
    pub fn epsilon_var(&self) -> f64 {
        let s = self.delta.raw_samples();
        s.iter().map(|h| h.lambda * h.lambda).sum::<f64>() / s.len() as f64
    }

    /// Keep both stages' hyperparameter draws, condition on new data.
    pub fn update_data(&self, ds: &Dataset) -> Result<Self> {
        check_counts(ds)?;
        let (xl, yl) = canonical_subset(ds, Fidelity::Low, self.output);
        let (xh, yh) = canonical_subset(ds, Fidelity::High, self.output);
        let eta = self.eta.refit_data(xl, yl)?;
        let r = residuals(&eta, &xh, &yh)?;
        let delta = self.delta.refit_data(xh, r)?;
        MfgpModel::new(eta, delta, self.output)
    }

    /// `(E[η] + E[δ], Var[η] + Var[δ])` at `xq`.
    pub fn predict(&self, xq: &[f64]) -> Result<(f64, f64)> {
        self.predict_with(xq, PredictMode::Mixture)
    }

    pub fn predict_with(&self, xq: &[f64], mode: PredictMode) -> Result<(f64, f64)> {
        let (me, ve) = self.eta.predict_with(xq, mode)?;
        let (md, vd) = self.delta.predict_with(xq, mode)?;
        Ok((me + md, ve + vd))
    }

    /// Per-stage predictions `(eta, delta)` for each row.
    pub fn predict_stages(&self, xq: ArrayView2<f64>, mode: PredictMode) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
        Ok((self.eta.predict_batch(xq, mode)?, self.delta.predict_batch(xq, mode)?))
    }

    pub fn predict_batch(&self, xq: ArrayView2<f64>, mode: PredictMode) -> Result<Vec<(f64, f64)>> {
        let (e, d) = self.predict_stages(xq, mode)?;
        Ok(e.iter().zip(&d).map(|(a, b)| (a.0 + b.0, a.1 + b.1)).collect())
    }

    pub fn to_doc(&self) -> MfgpModelDoc {
        MfgpModelDoc {
            schema_version: SCHEMA_VERSION,
            output: self.output,
            epsilon_var: self.epsilon_var(),
            eta: self.eta.to_doc(),
            delta: self.delta.to_doc(),
        }
    }

    pub fn from_doc(doc: MfgpModelDoc) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!("unsupported schema version {}", doc.schema_version)));
        }
        MfgpModel::new(GpModel::from_doc(doc.eta)?, GpModel::from_doc(doc.delta)?, doc.output)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MfgpModelDoc {
    pub schema_version: u32,
    pub output: usize,
    /// Informational; recomputed from δ on load.
    pub epsilon_var: f64,
    pub eta: GpModelDoc,
    pub delta: GpModelDoc,
}

/// One two-fidelity model per output column.
#[derive(Clone, Debug)]
pub struct MfSurrogate {
    pub models: Vec<MfgpModel>,
}

impl MfSurrogate {
    /// Fit every output; outputs are independent and run in parallel.
    pub fn fit(ds: &Dataset, cfg: &MfgpConfig) -> Result<Self> {
        let models = crate::par::try_map_range(ds.m(), |j| mfgp_fit(ds, j, cfg))?;
        Ok(MfSurrogate { models })
    }

    pub fn update_data(&self, ds: &Dataset) -> Result<Self> {
        let models = crate::par::try_map_range(self.models.len(), |j| self.models[j].update_data(ds))?;
        Ok(MfSurrogate { models })
    }

    pub fn n_outputs(&self) -> usize {
        self.models.len()
    }

    pub fn dim(&self) -> usize {
        self.models.first().map_or(0, MfgpModel::dim)
    }

    /// Means and variances, `n × m` each.
    pub fn predict_rows(&self, xq: ArrayView2<f64>, mode: PredictMode) -> Result<(Array2<f64>, Array2<f64>)> {
        let n = xq.nrows();
        let m = self.models.len();
        let mut mean = Array2::zeros((n, m));
        let mut var = Array2::zeros((n, m));
        for (j, model) in self.models.iter().enumerate() {
            for (i, (mu, v)) in model.predict_batch(xq, mode)?.into_iter().enumerate() {
                mean[[i, j]] = mu;
                var[[i, j]] = v;
            }
        }
        Ok((mean, var))
    }

    pub fn to_docs(&self) -> Vec<MfgpModelDoc> {
        self.models.iter().map(MfgpModel::to_doc).collect()
    }

    pub fn from_docs(docs: Vec<MfgpModelDoc>) -> Result<Self> {
        let models = docs.into_iter().map(MfgpModel::from_doc).collect::<Result<Vec<_>>>()?;
        Ok(MfSurrogate { models })
    }
}

/// Joint covariance of `[y_high; η(x_high); w_low]`:
/// `[[K_y, 0, 0], [0, K_u, K_uw], [0, K_uwᵀ, K_w]]`. Every diagonal block
/// carries its kernel's nugget. Inspection only; fitting is sequential.
pub fn mf_cov(ds: &Dataset, h_eta: &GpHyper, h_delta: &GpHyper) -> Result<Array2<f64>> {
    h_eta.validate(ds.d())?;
    h_delta.validate(ds.d())?;
    let (xh, _) = ds.subset(Fidelity::High);
    let (xl, _) = ds.subset(Fidelity::Low);
    let (nh, nl) = (xh.nrows(), xl.nrows());
    let n = 2 * nh + nl;
    let mut k = Array2::zeros((n, n));
    k.slice_mut(s![..nh, ..nh]).assign(&build_cov(xh.view(), h_delta)?);
    k.slice_mut(s![nh..2 * nh, nh..2 * nh]).assign(&build_cov(xh.view(), h_eta)?);
    let kuw = cross_cov(xh.view(), xl.view(), h_eta)?;
    k.slice_mut(s![nh..2 * nh, 2 * nh..]).assign(&kuw);
    k.slice_mut(s![2 * nh.., nh..2 * nh]).assign(&kuw.t());
    k.slice_mut(s![2 * nh.., 2 * nh..]).assign(&build_cov(xl.view(), h_eta)?);
    Ok(k)
}
