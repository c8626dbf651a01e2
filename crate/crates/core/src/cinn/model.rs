use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::block::{row, BlockTape, CouplingBlock};
use crate::error::{Error, Result};
use crate::numcore::{DenseNet, Mode, NetGrads, Tape};
use crate::sampling::{self, SeededRng};
use crate::SCHEMA_VERSION;

/// Network shape. Every subnet uses LeakyReLU between hidden layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CinnArch {
    /// Number of coupling blocks `L`.
    pub n_blocks: usize,
    /// Hidden widths of each scale and shift net.
    pub hidden: Vec<usize>,
    /// Hidden widths of the conditioning net.
    pub cond_hidden: Vec<usize>,
    /// Conditioning vector size `D_c`.
    pub d_c: usize,
    #[serde(default = "default_clamp")]
    pub s_clamp: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    pub seed: u64,
}

fn default_clamp() -> f64 {
    2.0
}

fn default_dropout() -> f64 {
    0.2
}

impl CinnArch {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.d_c == 0 {
            return Err(Error::config("need at least one block and a non-empty condition"));
        }
        if self.hidden.iter().chain(&self.cond_hidden).any(|&w| w == 0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if !(self.s_clamp > 0.0) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("s_clamp must be positive and dropout in [0, 1)"));
        }
        Ok(())
    }
}

/// Inputs standardized per column, observations min-max scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CinnNorm {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
}

impl CinnNorm {
    pub fn identity(m: usize, d_y: usize) -> Self {
        CinnNorm {
            x_mean: vec![0.0; m],
            x_std: vec![1.0; m],
            y_min: vec![0.0; d_y],
            y_max: vec![1.0; d_y],
        }
    }

    /// Statistics from data. Constant columns get unit scale.
    pub fn fit(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() < 2 || x.nrows() != y.nrows() {
            return Err(Error::shape("normalization needs at least two paired rows"));
        }
        let x_mean = x.mean_axis(Axis(0)).expect("rows").to_vec();
        let x_std = x
            .std_axis(Axis(0), 0.0)
            .iter()
            .map(|&s| if s > 1e-12 { s } else { 1.0 })
            .collect();
        let y_min: Vec<f64> = y.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b)).to_vec();
        let mut y_max: Vec<f64> = y.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b)).to_vec();
        for (lo, hi) in y_min.iter().zip(y_max.iter_mut()) {
            if *hi - *lo <= 1e-12 {
                *hi = *lo + 1.0;
            }
        }
        Ok(CinnNorm {
            x_mean,
            x_std,
            y_min,
            y_max,
        })
    }

    pub fn x_to(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut o = x.to_owned();
        for mut r in o.rows_mut() {
            for (j, v) in r.iter_mut().enumerate() {
                *v = (*v - self.x_mean[j]) / self.x_std[j];
            }
        }
        o
    }

    pub fn x_from(&self, xn: ArrayView2<f64>) -> Array2<f64> {
        let mut o = xn.to_owned();
        for mut r in o.rows_mut() {
            for (j, v) in r.iter_mut().enumerate() {
                *v = *v * self.x_std[j] + self.x_mean[j];
            }
        }
        o
    }

    pub fn y_to(&self, y: ArrayView2<f64>) -> Array2<f64> {
        let mut o = y.to_owned();
        for mut r in o.rows_mut() {
            for (j, v) in r.iter_mut().enumerate() {
                *v = (*v - self.y_min[j]) / (self.y_max[j] - self.y_min[j]);
            }
        }
        o
    }

    /// `log|det|` of the map from raw to standardized inputs.
    pub fn x_logdet(&self) -> f64 {
        -self.x_std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Conditioning net `g: ỹ → c` plus `L` permute-then-couple blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct CinnModel {
    m: usize,
    d_y: usize,
    cond_net: DenseNet,
    blocks: Vec<CouplingBlock>,
    perm_seeds: Vec<u64>,
    perms: Vec<Vec<usize>>,
    norm: CinnNorm,
}

pub(crate) struct ModelTape {
    c: Array2<f64>,
    cond_tape: Tape,
    blocks: Vec<BlockTape>,
}

/// Gradients in the same order as [`CinnModel::params_mut`].
#[derive(Clone, Debug, PartialEq)]
pub struct CinnGrads {
    pub cond: NetGrads,
    pub blocks: Vec<(NetGrads, NetGrads)>,
}

impl CinnGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = self.cond.slices();
        for (s, t) in &self.blocks {
            v.extend(s.slices());
            v.extend(t.slices());
        }
        v
    }
}

/// Uniform permutation of `0..m` from a seed.
pub fn permutation_from_seed(m: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..m).collect();
    p.shuffle(&mut sampling::rng(seed));
    p
}

fn permute(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    x.select(Axis(1), perm)
}

fn unpermute(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut o = Array2::zeros(x.raw_dim());
    for (i, &p) in perm.iter().enumerate() {
        o.column_mut(p).assign(&x.column(i));
    }
    o
}

fn at_block(l: usize, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("block {l}: {msg}")),
        other => other,
    }
}

impl CinnModel {
    /// Fresh model. Coupling subnets start at zero output, so the flow is
    /// a pure permutation until trained.
    pub fn new(m: usize, d_y: usize, arch: &CinnArch, norm: CinnNorm) -> Result<Self> {
        arch.validate()?;
        if norm.x_mean.len() != m || norm.y_min.len() != d_y {
            return Err(Error::shape("normalization does not match model dimensions"));
        }
        let mut rng = sampling::rng(arch.seed);
        let mut dims = vec![d_y];
        dims.extend_from_slice(&arch.cond_hidden);
        dims.push(arch.d_c);
        let cond_net = DenseNet::mlp(&dims, arch.dropout, false, &mut rng)?;
        let mut blocks = Vec::with_capacity(arch.n_blocks);
        let mut perm_seeds = Vec::with_capacity(arch.n_blocks);
        for l in 0..arch.n_blocks {
            blocks.push(CouplingBlock::new(m, arch.d_c, &arch.hidden, arch.dropout, arch.s_clamp, &mut rng)?);
            perm_seeds.push(sampling::derive_seed(arch.seed, 0x9e37 + l as u64));
        }
        CinnModel::from_parts(m, d_y, cond_net, blocks, perm_seeds, norm)
    }

    pub fn from_parts(
        m: usize,
        d_y: usize,
        cond_net: DenseNet,
        blocks: Vec<CouplingBlock>,
        perm_seeds: Vec<u64>,
        norm: CinnNorm,
    ) -> Result<Self> {
        if cond_net.in_dim() != d_y {
            return Err(Error::shape("conditioning net input does not match D_y"));
        }
        if blocks.is_empty() || perm_seeds.len() != blocks.len() {
            return Err(Error::shape("need one permutation seed per block"));
        }
        for b in &blocks {
            if b.dim() != m || b.cond_dim() != cond_net.out_dim() {
                return Err(Error::shape("block shape does not match the model"));
            }
        }
        if norm.x_mean.len() != m || norm.x_std.len() != m || norm.y_min.len() != d_y || norm.y_max.len() != d_y {
            return Err(Error::shape("normalization does not match model dimensions"));
        }
        let perms = perm_seeds.iter().map(|&s| permutation_from_seed(m, s)).collect();
        Ok(CinnModel {
            m,
            d_y,
            cond_net,
            blocks,
            perm_seeds,
            perms,
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn obs_dim(&self) -> usize {
        self.d_y
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_net.out_dim()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [CouplingBlock] {
        &mut self.blocks
    }

    pub fn cond_net(&self) -> &DenseNet {
        &self.cond_net
    }

    pub fn cond_net_mut(&mut self) -> &mut DenseNet {
        &mut self.cond_net
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn normalization(&self) -> &CinnNorm {
        &self.norm
    }

    pub fn param_count(&self) -> usize {
        self.cond_net.param_count()
            + self
                .blocks
                .iter()
                .map(|b| b.s_net.param_count() + b.t_net.param_count())
                .sum::<usize>()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut v = self.cond_net.params();
        for b in &self.blocks {
            v.extend(b.s_net.params());
            v.extend(b.t_net.params());
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.cond_net.params_mut();
        for b in &mut self.blocks {
            v.extend(b.s_net.params_mut());
            v.extend(b.t_net.params_mut());
        }
        v
    }

    pub fn param_sumsq(&self) -> f64 {
        self.params().iter().flat_map(|s| s.iter()).map(|v| v * v).sum()
    }

    pub fn set_dropout(&mut self, rate: f64) {
        self.cond_net.set_dropout(rate);
        for b in &mut self.blocks {
            b.s_net.set_dropout(rate);
            b.t_net.set_dropout(rate);
        }
    }

    fn check_pair(&self, x: &ArrayView2<f64>, yn: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.m || yn.ncols() != self.d_y || x.nrows() != yn.nrows() {
            return Err(Error::shape(format!(
                "expected [n×{}] inputs and [n×{}] observations, got {:?} and {:?}",
                self.m,
                self.d_y,
                x.dim(),
                yn.dim()
            )));
        }
        Ok(())
    }

    /// Conditioning vectors for normalized observations, inference mode.
    pub fn condition_norm(&self, yn: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.cond_net.predict(yn)
    }

    /// `c = g(ỹ)` for a raw observation.
    pub fn condition(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.d_y {
            return Err(Error::shape(format!("observation has {} entries, expected {}", y.len(), self.d_y)));
        }
        let yn = self.norm.y_to(row(y)?);
        Ok(self.condition_norm(yn.view())?.into_raw_vec_and_offset().0)
    }

    pub(crate) fn forward_taped(
        &self,
        xn: ArrayView2<f64>,
        yn: ArrayView2<f64>,
        mode: Mode,
        mut rng: Option<&mut SeededRng>,
    ) -> Result<(Array2<f64>, Array1<f64>, ModelTape)> {
        self.check_pair(&xn, &yn)?;
        let (c, cond_tape) = self.cond_net.forward(yn, mode, rng.as_deref_mut())?;
        let mut h = xn.to_owned();
        let mut logdet = Array1::zeros(xn.nrows());
        let mut tapes = Vec::with_capacity(self.blocks.len());
        for (l, (b, p)) in self.blocks.iter().zip(&self.perms).enumerate() {
            let hp = permute(&h, p);
            let (z, ld, tape) = b
                .forward_taped(hp.view(), c.view(), mode, rng.as_deref_mut())
                .map_err(|e| at_block(l, e))?;
            logdet += &ld;
            tapes.push(tape);
            h = z;
        }
        Ok((
            h,
            logdet,
            ModelTape {
                c,
                cond_tape,
                blocks: tapes,
            },
        ))
    }

    /// Normalized-space forward pass in inference mode.
    pub fn forward_norm(&self, xn: ArrayView2<f64>, yn: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        let (z, ld, _) = self.forward_taped(xn, yn, Mode::Infer, None)?;
        Ok((z, ld))
    }

    /// Parameter gradients of `Σ_rows (gz · z + glogdet · logdet)`.
    pub(crate) fn backward(&self, tape: &ModelTape, gz: ArrayView2<f64>, glogdet: ArrayView1<f64>) -> Result<CinnGrads> {
        let mut g = gz.to_owned();
        let mut gc = Array2::zeros(tape.c.raw_dim());
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for l in (0..self.blocks.len()).rev() {
            let (ds, dt, gx, gcl) = self.blocks[l].backward(&tape.blocks[l], g.view(), glogdet)?;
            gc += &gcl;
            g = unpermute(&gx, &self.perms[l]);
            blocks.push((ds, dt));
        }
        blocks.reverse();
        let (cond, _) = self.cond_net.backward(&tape.cond_tape, gc.view())?;
        Ok(CinnGrads { cond, blocks })
    }

    /// Normalized-space inverse: latents and normalized observations to
    /// standardized inputs.
    pub fn inverse_norm(&self, z: ArrayView2<f64>, yn: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_pair(&z, &yn)?;
        let c = self.condition_norm(yn)?;
        self.inverse_with_condition(z, c.view())
    }

    /// Inverse with a precomputed condition per row.
    pub fn inverse_with_condition(&self, z: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = z.to_owned();
        for l in (0..self.blocks.len()).rev() {
            let x = self.blocks[l].inverse_batch(h.view(), c).map_err(|e| at_block(l, e))?;
            h = unpermute(&x, &self.perms[l]);
        }
        Ok(h)
    }

    /// Raw-space forward: `z` and `log|det ∂z/∂x|` including the input
    /// standardization.
    pub fn cinn_forward(&self, x: &[f64], y: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.forward_rows(row(x)?, row(y)?)?;
        Ok((z.into_raw_vec_and_offset().0, ld[0]))
    }

    pub fn forward_rows(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_pair(&x, &y)?;
        let (z, ld) = self.forward_norm(self.norm.x_to(x).view(), self.norm.y_to(y).view())?;
        Ok((z, ld + self.norm.x_logdet()))
    }

    /// Raw-space inverse of [`CinnModel::cinn_forward`].
    pub fn cinn_invert_one(&self, z: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.inverse_rows(row(z)?, row(y)?)?.into_raw_vec_and_offset().0)
    }

    pub fn inverse_rows(&self, z: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_pair(&z, &y)?;
        let xn = self.inverse_norm(z, self.norm.y_to(y).view())?;
        Ok(self.norm.x_from(xn.view()))
    }

    pub fn to_doc(&self) -> CinnModelDoc {
        CinnModelDoc {
            schema_version: SCHEMA_VERSION,
            m: self.m,
            d_y: self.d_y,
            d_c: self.cond_dim(),
            l: self.blocks.len(),
            split_indices: self.blocks.iter().map(|b| b.split).collect(),
            permutation_seeds: self.perm_seeds.clone(),
            s_clamp: self.blocks[0].s_clamp,
            cond_net: self.cond_net.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDoc {
                    s_net: b.s_net.clone(),
                    t_net: b.t_net.clone(),
                })
                .collect(),
            normalization: self.norm.clone(),
        }
    }

    pub fn from_doc(doc: CinnModelDoc) -> Result<Self> {
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!("unsupported schema version {}", doc.schema_version)));
        }
        if doc.blocks.len() != doc.l || doc.split_indices.len() != doc.l {
            return Err(Error::shape("block count disagrees with L"));
        }
        let blocks = doc
            .blocks
            .into_iter()
            .zip(&doc.split_indices)
            .map(|(b, &m)| CouplingBlock::from_parts(m, b.s_net, b.t_net, doc.s_clamp))
            .collect::<Result<Vec<_>>>()?;
        let model = CinnModel::from_parts(doc.m, doc.d_y, doc.cond_net, blocks, doc.permutation_seeds, doc.normalization)?;
        if model.cond_dim() != doc.d_c {
            return Err(Error::shape("D_c disagrees with the conditioning net"));
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockDoc {
    pub s_net: DenseNet,
    pub t_net: DenseNet,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CinnModelDoc {
    pub schema_version: u32,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "D_y")]
    pub d_y: usize,
    #[serde(rename = "D_c")]
    pub d_c: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub split_indices: Vec<usize>,
    pub permutation_seeds: Vec<u64>,
    pub s_clamp: f64,
    pub cond_net: DenseNet,
    pub blocks: Vec<BlockDoc>,
    pub normalization: CinnNorm,
}

impl Serialize for CinnModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for CinnModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        CinnModel::from_doc(CinnModelDoc::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(seed: u64) -> CinnArch {
        CinnArch {
            n_blocks: 3,
            hidden: vec![8],
            cond_hidden: vec![6],
            d_c: 4,
            s_clamp: 2.0,
            dropout: 0.0,
            seed,
        }
    }

    #[test]
    fn untrained_flow_is_a_permutation() {
        let m = CinnModel::new(5, 2, &arch(3), CinnNorm::identity(5, 2)).unwrap();
        let x = [0.1, 0.2, 0.3, 0.4, 0.5];
        let (z, ld) = m.cinn_forward(&x, &[0.3, 0.7]).unwrap();
        assert_eq!(ld, 0.0);
        let mut zs = z.clone();
        zs.sort_by(f64::total_cmp);
        assert_eq!(zs, x.to_vec());
        assert_eq!(m.cinn_invert_one(&z, &[0.3, 0.7]).unwrap(), x.to_vec());
    }

    #[test]
    fn condition_is_deterministic_with_fixed_shape() {
        let m = CinnModel::new(4, 1, &arch(4), CinnNorm::identity(4, 1)).unwrap();
        for y in [0.0, 0.3, 1e6] {
            let a = m.condition(&[y]).unwrap();
            assert_eq!(a.len(), 4);
            assert_eq!(a, m.condition(&[y]).unwrap());
        }
        assert!(m.condition(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn identity_condition_net_passes_value() {
        let m = CinnModel::new(2, 1, &arch(5), CinnNorm::identity(2, 1)).unwrap();
        let blocks: Vec<CouplingBlock> = (0..3)
            .map(|_| CouplingBlock::new(2, 1, &[4], 0.0, 2.0, &mut sampling::rng(0)).unwrap())
            .collect();
        let m = CinnModel::from_parts(2, 1, DenseNet::identity(1), blocks, vec![1, 2, 3], m.normalization().clone())
            .unwrap();
        assert_eq!(m.condition(&[0.3]).unwrap(), vec![0.3]);
    }

    #[test]
    fn json_round_trip() {
        let m = CinnModel::new(4, 2, &arch(6), CinnNorm::identity(4, 2)).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"permutation_seeds\""));
        let back: CinnModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
