//! PCA codec for vector-valued outputs.
//!
//! Energy is the fraction of total variance. Component signs are fixed so
//! that each component's largest-magnitude entry is positive.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `k × D`, orthonormal rows.
    pub components: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub energy_fractions: Vec<f64>,
    pub total_energy_captured: f64,
    /// Mean squared deviation from the mean over the fitting rows.
    pub total_variance: f64,
}

impl PcaBasis {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::shape(format!("expected vector of length {}, got {n}", self.dim())));
        }
        Ok(())
    }

    /// `components · (y − mean)`.
    pub fn encode(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y.len())?;
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(y).zip(&self.mean).map(|((c, y), m)| c * (y - m)).sum())
            .collect())
    }

    /// `mean + componentsᵀ · c`.
    pub fn decode(&self, c: &[f64]) -> Result<Vec<f64>> {
        if c.len() != self.k() {
            return Err(Error::shape(format!("expected {} coefficients, got {}", self.k(), c.len())));
        }
        let mut out = self.mean.clone();
        for (comp, &ci) in self.components.iter().zip(c) {
            for (o, &v) in out.iter_mut().zip(comp) {
                *o += ci * v;
            }
        }
        Ok(out)
    }

    pub fn encode_rows(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(y.ncols())?;
        let mut out = Array2::zeros((y.nrows(), self.k()));
        for (i, row) in y.rows().into_iter().enumerate() {
            let c = self.encode(&row.to_vec())?;
            out.row_mut(i).assign(&ArrayView1::from(&c));
        }
        Ok(out)
    }

    pub fn decode_rows(&self, c: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((c.nrows(), self.dim()));
        for (i, row) in c.rows().into_iter().enumerate() {
            let y = self.decode(&row.to_vec())?;
            out.row_mut(i).assign(&ArrayView1::from(&y));
        }
        Ok(out)
    }
}

/// Fit a PCA basis keeping the smallest `k` whose cumulative energy reaches
/// `energy_threshold`, optionally capped at `max_k`.
pub fn pca_fit(y: ArrayView2<f64>, energy_threshold: f64, max_k: Option<usize>) -> Result<PcaBasis> {
    let (n, d) = y.dim();
    if n < 2 {
        return Err(Error::shape("PCA needs at least two rows"));
    }
    if !(energy_threshold > 0.0 && energy_threshold <= 1.0) {
        return Err(Error::config("energy threshold must lie in (0, 1]"));
    }
    let mean = y.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &y - &mean;
    let total_sq: f64 = centered.iter().map(|v| v * v).sum();
    let total_variance = total_sq / n as f64;
    if total_sq <= f64::MIN_POSITIVE {
        log::warn!("PCA input has zero variance; returning an empty basis");
        return Ok(PcaBasis {
            mean: mean.to_vec(),
            components: vec![],
            singular_values: vec![],
            energy_fractions: vec![],
            total_energy_captured: 0.0,
            total_variance: 0.0,
        });
    }
    let m = DMatrix::from_row_iterator(n, d, centered.iter().copied());
    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::numeric("SVD did not return right singular vectors"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let rank_tol = svd.singular_values[order[0]] * 1e-12 * (n.max(d) as f64);
    let usable: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > rank_tol)
        .collect();
    let cap = max_k.unwrap_or(usize::MAX).min(usable.len());
    let mut components = Vec::new();
    let mut singular_values = Vec::new();
    let mut energy_fractions = Vec::new();
    let mut cum = 0.0;
    for &i in usable.iter().take(cap) {
        if cum >= energy_threshold * (1.0 - 1e-12) {
            break;
        }
        let s = svd.singular_values[i];
        let frac = s * s / total_sq;
        let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
        let pivot = row
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(row);
        singular_values.push(s);
        energy_fractions.push(frac);
        cum += frac;
    }
    Ok(PcaBasis {
        mean: mean.to_vec(),
        components,
        singular_values,
        energy_fractions: energy_fractions.clone(),
        total_energy_captured: energy_fractions.iter().sum(),
        total_variance,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMode {
    /// One PCA over the concatenated, per-channel standardized profiles.
    #[default]
    Joint,
    /// One PCA per channel.
    PerChannel,
}

/// Codec for several concatenated profiles (channels) of fixed length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileCodec {
    pub channel_lens: Vec<usize>,
    /// Per-channel divisor applied after centering.
    pub channel_scale: Vec<f64>,
    pub mode: ProfileMode,
    pub bases: Vec<PcaBasis>,
}

impl ProfileCodec {
    pub fn fit(
        profiles: ArrayView2<f64>,
        channel_lens: &[usize],
        mode: ProfileMode,
        energy_threshold: f64,
        max_k: Option<usize>,
    ) -> Result<Self> {
        let total: usize = channel_lens.iter().sum();
        if total != profiles.ncols() {
            return Err(Error::shape(format!(
                "channel lengths sum to {total}, profiles have {} columns",
                profiles.ncols()
            )));
        }
        let mut channel_scale = Vec::with_capacity(channel_lens.len());
        let mut off = 0;
        for &len in channel_lens {
            let block = profiles.slice(ndarray::s![.., off..off + len]);
            let mean = block.mean_axis(Axis(0)).expect("rows");
            let ms = (&block - &mean).iter().map(|v| v * v).sum::<f64>() / (block.len() as f64);
            channel_scale.push(if ms > 0.0 { ms.sqrt() } else { 1.0 });
            off += len;
        }
        let mut codec = ProfileCodec {
            channel_lens: channel_lens.to_vec(),
            channel_scale,
            mode,
            bases: vec![],
        };
        let scaled = codec.scale(profiles);
        codec.bases = match mode {
            ProfileMode::Joint => vec![pca_fit(scaled.view(), energy_threshold, max_k)?],
            ProfileMode::PerChannel => {
                let mut out = Vec::new();
                let mut off = 0;
                for &len in channel_lens {
                    let block = scaled.slice(ndarray::s![.., off..off + len]);
                    out.push(pca_fit(block, energy_threshold, max_k)?);
                    off += len;
                }
                out
            }
        };
        Ok(codec)
    }

    fn scale(&self, profiles: ArrayView2<f64>) -> Array2<f64> {
        let mut out = profiles.to_owned();
        let mut off = 0;
        for (&len, &s) in self.channel_lens.iter().zip(&self.channel_scale) {
            out.slice_mut(ndarray::s![.., off..off + len]).mapv_inplace(|v| v / s);
            off += len;
        }
        out
    }

    pub fn n_coefficients(&self) -> usize {
        self.bases.iter().map(|b| b.k()).sum()
    }

    pub fn profile_len(&self) -> usize {
        self.channel_lens.iter().sum()
    }

    /// Energy captured, weighted by each basis's share of total variance.
    pub fn energy_captured(&self) -> f64 {
        let tv: f64 = self.bases.iter().map(|b| b.total_variance).sum();
        if tv == 0.0 {
            return 0.0;
        }
        self.bases
            .iter()
            .map(|b| b.total_energy_captured * b.total_variance)
            .sum::<f64>()
            / tv
    }

    pub fn encode(&self, profile: &[f64]) -> Result<Vec<f64>> {
        if profile.len() != self.profile_len() {
            return Err(Error::shape("profile length mismatch"));
        }
        let scaled = self.scale(ArrayView2::from_shape((1, profile.len()), profile).expect("1 row"));
        let row = scaled.row(0).to_vec();
        match self.mode {
            ProfileMode::Joint => self.bases[0].encode(&row),
            ProfileMode::PerChannel => {
                let mut out = Vec::new();
                let mut off = 0;
                for (b, &len) in self.bases.iter().zip(&self.channel_lens) {
                    out.extend(b.encode(&row[off..off + len])?);
                    off += len;
                }
                Ok(out)
            }
        }
    }

    pub fn decode(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.n_coefficients() {
            return Err(Error::shape("coefficient count mismatch"));
        }
        let mut out = match self.mode {
            ProfileMode::Joint => self.bases[0].decode(coeffs)?,
            ProfileMode::PerChannel => {
                let mut out = Vec::new();
                let mut off = 0;
                for b in &self.bases {
                    out.extend(b.decode(&coeffs[off..off + b.k()])?);
                    off += b.k();
                }
                out
            }
        };
        let mut off = 0;
        for (&len, &s) in self.channel_lens.iter().zip(&self.channel_scale) {
            out[off..off + len].iter_mut().for_each(|v| *v *= s);
            off += len;
        }
        Ok(out)
    }

    pub fn encode_rows(&self, profiles: ArrayView2<f64>) -> Result<Array2<f64>> {
        let k = self.n_coefficients();
        let mut out = Array2::zeros((profiles.nrows(), k));
        for (i, row) in profiles.rows().into_iter().enumerate() {
            out.row_mut(i).assign(&Array1::from(self.encode(&row.to_vec())?));
        }
        Ok(out)
    }
}
