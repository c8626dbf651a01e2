use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::kernel::{build_cov, factor_cov, sq_exp, GpHyper};
use super::mcmc::McmcDiagnostics;
use super::prior::HyperPrior;
use crate::error::{Error, Result};
use crate::linalg;
use crate::par;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How predictions combine the retained hyperparameter draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    /// Mixture over all retained draws (law of total variance).
    #[default]
    Mixture,
    /// Only the draw with the highest log posterior.
    Map,
}

/// Affine maps applied before fitting: inputs standardized per column,
/// output centered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
}

impl Normalization {
    pub fn identity(d: usize) -> Self {
        Normalization {
            x_mean: vec![0.0; d],
            x_std: vec![1.0; d],
            y_mean: 0.0,
        }
    }

    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Self {
        let d = x.ncols();
        if x.nrows() == 0 {
            return Normalization::identity(d);
        }
        let x_mean = x.mean_axis(Axis(0)).expect("non-empty").to_vec();
        let x_std = (0..d)
            .map(|j| {
                let s = x.column(j).std(0.0);
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Normalization {
            x_mean,
            x_std,
            y_mean: y.mean().unwrap_or(0.0),
        }
    }

    pub fn x_to(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.x_mean[j]) / self.x_std[j];
            }
        }
        out
    }

    fn x_point(&self, x: &[f64]) -> Array1<f64> {
        Array1::from_iter(x.iter().enumerate().map(|(j, v)| (v - self.x_mean[j]) / self.x_std[j]))
    }

    /// Express normalized-space hyperparameters in raw input units.
    pub fn hyper_to_raw(&self, h: &GpHyper) -> GpHyper {
        GpHyper {
            sigma: h.sigma,
            beta: h
                .beta
                .iter()
                .zip(&self.x_std)
                .map(|(b, s)| b / (s * s))
                .collect(),
            lambda: h.lambda,
        }
    }
}

/// `log p(y | X, φ) + log p(φ)` including the `(2π)` constant.
pub fn log_posterior(x: ArrayView2<f64>, y: ArrayView1<f64>, h: &GpHyper, prior: &HyperPrior) -> Result<f64> {
    if x.nrows() != y.len() {
        return Err(Error::shape("inputs and outputs have different row counts"));
    }
    h.validate(x.ncols())?;
    let lp = prior.ln_density(h);
    if x.nrows() == 0 {
        return Ok(lp);
    }
    let k = build_cov(x, h)?;
    let (l, _) = factor_cov(&k, h)?;
    let a = linalg::solve_lower(&l, y);
    let quad = a.dot(&a);
    let n = y.len() as f64;
    Ok(-0.5 * linalg::chol_logdet(&l) - 0.5 * quad - 0.5 * n * LN_2PI + lp)
}

#[derive(Clone, Debug)]
struct SampleCache {
    chol: Array2<f64>,
    alpha: Array1<f64>,
}

/// Single-output GP with a set of posterior hyperparameter draws.
///
/// Hyperparameters live in normalized space; predictions come back in raw
/// output units.
#[derive(Clone, Debug)]
pub struct GpModel {
    x: Array2<f64>,
    y: Array1<f64>,
    norm: Normalization,
    xn: Array2<f64>,
    samples: Vec<GpHyper>,
    log_posts: Vec<f64>,
    prior: HyperPrior,
    diagnostics: Option<McmcDiagnostics>,
    cache: Vec<SampleCache>,
}

impl GpModel {
    /// Build from explicit hyperparameter draws (normalized space).
    /// `log_posts` ranks draws for MAP prediction; pass `None` to rank by
    /// recomputed log posterior.
    pub fn from_parts(
        x: Array2<f64>,
        y: Array1<f64>,
        norm: Normalization,
        samples: Vec<GpHyper>,
        log_posts: Option<Vec<f64>>,
        prior: HyperPrior,
        diagnostics: Option<McmcDiagnostics>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("GP needs at least one hyperparameter draw"));
        }
        if x.nrows() != y.len() {
            return Err(Error::shape("inputs and outputs have different row counts"));
        }
        let d = x.ncols();
        if norm.x_mean.len() != d || prior.dim() != d {
            return Err(Error::shape("normalization or prior dimension mismatch"));
        }
        for h in &samples {
            h.validate(d)?;
        }
        let xn = norm.x_to(x.view());
        let yc = y.mapv(|v| v - norm.y_mean);
        let cache = par::try_map_range(samples.len(), |s| -> Result<SampleCache> {
            let h = &samples[s];
            if xn.nrows() == 0 {
                return Ok(SampleCache {
                    chol: Array2::zeros((0, 0)),
                    alpha: Array1::zeros(0),
                });
            }
            let k = build_cov(xn.view(), h)?;
            let (chol, _) = factor_cov(&k, h)?;
            let mut alpha = linalg::cho_solve(&chol, yc.view());
            // One refinement step against the unjittered K.
            let r = &yc - &k.dot(&alpha);
            alpha += &linalg::cho_solve(&chol, r.view());
            Ok(SampleCache { chol, alpha })
        })?;
        let log_posts = match log_posts {
            Some(lp) if lp.len() == samples.len() => lp,
            _ => samples
                .iter()
                .map(|h| log_posterior(xn.view(), yc.view(), h, &prior).unwrap_or(f64::NEG_INFINITY))
                .collect(),
        };
        Ok(GpModel {
            x,
            y,
            norm,
            xn,
            samples,
            log_posts,
            prior,
            diagnostics,
            cache,
        })
    }

    /// Fixed hyperparameters in raw units, no normalization.
    pub fn with_hypers(x: Array2<f64>, y: Array1<f64>, hypers: Vec<GpHyper>) -> Result<Self> {
        let d = x.ncols();
        GpModel::from_parts(
            x,
            y,
            Normalization::identity(d),
            hypers,
            None,
            HyperPrior::default_for(d),
            None,
        )
    }

    /// Same hyperparameter draws, new training data (normalization kept).
    pub fn refit_data(&self, x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        GpModel::from_parts(
            x,
            y,
            self.norm.clone(),
            self.samples.clone(),
            Some(self.log_posts.clone()),
            self.prior.clone(),
            self.diagnostics.clone(),
        )
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    pub fn train_x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn train_y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn prior(&self) -> &HyperPrior {
        &self.prior
    }

    pub fn samples(&self) -> &[GpHyper] {
        &self.samples
    }

    pub fn log_posteriors(&self) -> &[f64] {
        &self.log_posts
    }

    pub fn diagnostics(&self) -> Option<&McmcDiagnostics> {
        self.diagnostics.as_ref()
    }

    /// Posterior draws with length scales expressed in raw input units.
    pub fn raw_samples(&self) -> Vec<GpHyper> {
        self.samples.iter().map(|h| self.norm.hyper_to_raw(h)).collect()
    }

    pub fn map_index(&self) -> usize {
        self.log_posts
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }

    /// Largest prior predictive variance `σ² + λ²` among the draws.
    pub fn prior_var(&self) -> f64 {
        self.samples.iter().map(|h| h.prior_var()).fold(0.0, f64::max)
    }

    /// Check that every cached factor reproduces `K + jitter·I`.
    /// Returns the worst relative Frobenius error.
    pub fn factor_residual(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (h, c) in self.samples.iter().zip(&self.cache) {
            if self.xn.nrows() == 0 {
                continue;
            }
            let k = build_cov(self.xn.view(), h)?;
            let (_, jit) = factor_cov(&k, h)?;
            let mut kj = k;
            for i in 0..kj.nrows() {
                kj[[i, i]] += jit;
            }
            let r = c.chol.dot(&c.chol.t()) - &kj;
            let rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / kj.iter().map(|v| v * v).sum::<f64>().sqrt();
            worst = worst.max(rel);
        }
        Ok(worst)
    }

    fn predict_one_sample(&self, s: usize, xq: ArrayView1<f64>) -> (f64, f64) {
        let h = &self.samples[s];
        let c = &self.cache[s];
        let n = self.xn.nrows();
        if n == 0 {
            return (self.norm.y_mean, h.prior_var());
        }
        let kv = Array1::from_iter((0..n).map(|i| sq_exp(xq, self.xn.row(i), h)));
        let mean = kv.dot(&c.alpha) + self.norm.y_mean;
        let v = linalg::solve_lower(&c.chol, kv.view());
        let mut var = h.prior_var() - v.dot(&v);
        if var < -1e-10 {
            log::warn!("negative predictive variance {var:e} clamped to zero");
        }
        var = var.max(0.0);
        (mean, var)
    }

    /// Predictive mean and variance of a new observation at `xq` (raw units).
    pub fn predict(&self, xq: &[f64]) -> Result<(f64, f64)> {
        self.predict_with(xq, PredictMode::Mixture)
    }

    pub fn predict_with(&self, xq: &[f64], mode: PredictMode) -> Result<(f64, f64)> {
        if xq.len() != self.dim() {
            return Err(Error::shape(format!(
                "query has {} dimensions, model has {}",
                xq.len(),
                self.dim()
            )));
        }
        let xn = self.norm.x_point(xq);
        Ok(match mode {
            PredictMode::Map => self.predict_one_sample(self.map_index(), xn.view()),
            PredictMode::Mixture => {
                let s = self.samples.len() as f64;
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                let mut v = 0.0;
                for k in 0..self.samples.len() {
                    let (mu, var) = self.predict_one_sample(k, xn.view());
                    m1 += mu;
                    m2 += mu * mu;
                    v += var;
                }
                m1 /= s;
                let between = (m2 / s - m1 * m1).max(0.0);
                (m1, v / s + between)
            }
        })
    }

    /// Per-draw predictions at one point, raw units.
    pub fn predict_per_sample(&self, xq: &[f64]) -> Result<Vec<(f64, f64)>> {
        if xq.len() != self.dim() {
            return Err(Error::shape("query dimension mismatch"));
        }
        let xn = self.norm.x_point(xq);
        Ok((0..self.samples.len()).map(|s| self.predict_one_sample(s, xn.view())).collect())
    }

    /// Row-wise predictions, parallel over rows.
    pub fn predict_batch(&self, xq: ArrayView2<f64>, mode: PredictMode) -> Result<Vec<(f64, f64)>> {
        if xq.ncols() != self.dim() {
            return Err(Error::shape("query dimension mismatch"));
        }
        par::try_map_range(xq.nrows(), |i| {
            let row = xq.row(i).to_vec();
            self.predict_with(&row, mode)
        })
    }

    /// Mean-only predictions; cheaper than [`GpModel::predict_batch`].
    pub fn predict_mean_batch(&self, xq: ArrayView2<f64>, mode: PredictMode) -> Result<Vec<f64>> {
        if xq.ncols() != self.dim() {
            return Err(Error::shape("query dimension mismatch"));
        }
        let xn = self.norm.x_to(xq);
        let idx: Vec<usize> = match mode {
            PredictMode::Map => vec![self.map_index()],
            PredictMode::Mixture => (0..self.samples.len()).collect(),
        };
        let n = self.xn.nrows();
        Ok(par::map_range(xn.nrows(), |i| {
            let q = xn.row(i);
            let mut m = 0.0;
            for &s in &idx {
                let h = &self.samples[s];
                let c = &self.cache[s];
                let mut acc = 0.0;
                for t in 0..n {
                    acc += sq_exp(q, self.xn.row(t), h) * c.alpha[t];
                }
                m += acc;
            }
            m / idx.len() as f64 + self.norm.y_mean
        }))
    }

    pub fn to_doc(&self) -> GpModelDoc {
        GpModelDoc {
            schema_version: crate::SCHEMA_VERSION,
            x: self.x.rows().into_iter().map(|r| r.to_vec()).collect(),
            y: self.y.to_vec(),
            normalization: self.norm.clone(),
            posterior_samples: self.samples.clone(),
            log_posteriors: self.log_posts.clone(),
            prior_spec: self.prior.clone(),
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn from_doc(doc: GpModelDoc) -> Result<Self> {
        let d = doc.normalization.x_mean.len();
        let n = doc.x.len();
        let flat: Vec<f64> = doc.x.into_iter().flatten().collect();
        let x = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::shape(e.to_string()))?;
        GpModel::from_parts(
            x,
            Array1::from(doc.y),
            doc.normalization,
            doc.posterior_samples,
            Some(doc.log_posteriors),
            doc.prior_spec,
            doc.diagnostics,
        )
    }
}

/// JSON form of a [`GpModel`]. Factorizations are rebuilt on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GpModelDoc {
    pub schema_version: u32,
    #[serde(rename = "X")]
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub normalization: Normalization,
    pub posterior_samples: Vec<GpHyper>,
    #[serde(default)]
    pub log_posteriors: Vec<f64>,
    pub prior_spec: HyperPrior,
    #[serde(default)]
    pub diagnostics: Option<McmcDiagnostics>,
}

impl Serialize for GpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = GpModelDoc::deserialize(d)?;
        GpModel::from_doc(doc).map_err(serde::de::Error::custom)
    }
}
