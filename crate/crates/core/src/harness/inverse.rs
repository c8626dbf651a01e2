//! Pieces shared by the blade pipeline and the CLI: surrogate wrapper,
//! pair generation, inverse-consistency scoring and the validation report.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, MetricRow};
use super::toy::RadiusStats;
use crate::cinn::{
    cinn_invert, postprocess, CinnArch, CinnConfig, CinnModel, DesignCandidate, ForwardModel, InverseQuery,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::gp::PredictMode;
use crate::mfgp::{MfSurrogate, MfgpModelDoc};
use crate::numcore::{AdamConfig, LrSchedule};
use crate::reduce::ProfileCodec;
use crate::sampling;

/// Architecture and optimizer settings for an inverse model; seeds come
/// from the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CinnSetup {
    pub n_blocks: usize,
    pub hidden: Vec<usize>,
    pub cond_hidden: Vec<usize>,
    pub d_c: usize,
    pub s_clamp: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: LrSchedule,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub y_noise_std: f64,
    #[serde(default = "default_eval_rows")]
    pub eval_rows: usize,
}

fn default_eval_rows() -> usize {
    1024
}

impl Default for CinnSetup {
    fn default() -> Self {
        CinnSetup::desk()
    }
}

impl CinnSetup {
    /// Desk-scale network for the 85-input problem.
    pub fn desk() -> Self {
        CinnSetup {
            n_blocks: 8,
            hidden: vec![128, 128],
            cond_hidden: vec![128],
            d_c: 32,
            s_clamp: 2.0,
            dropout: 0.0,
            batch_size: 64,
            epochs: 40,
            schedule: LrSchedule::CosineAnneal {
                lr_start: 1e-3,
                lr_end: 1e-5,
                total_steps: 0,
            },
            weight_decay: 0.0,
            tau: 0.0,
            y_noise_std: 0.0,
            eval_rows: 1024,
        }
    }

    /// Eight blocks with s/t nets 256-512-256, conditioning net
    /// 400-512-640-896, dropout 0.2, batch 16, lr 1e-5 with weight decay
    /// 5e-7, 200 epochs with a ×0.1 drop on plateau.
    pub fn full_scale() -> Self {
        CinnSetup {
            n_blocks: 8,
            hidden: vec![256, 512, 256],
            cond_hidden: vec![400, 512, 640, 896],
            d_c: 896,
            s_clamp: 2.0,
            dropout: 0.2,
            batch_size: 16,
            epochs: 200,
            schedule: LrSchedule::plateau(1e-5),
            weight_decay: 5e-7,
            tau: 0.0,
            y_noise_std: 0.0,
            eval_rows: 1024,
        }
    }

    /// Full config for training on `n_rows` fixed pairs. A cosine schedule
    /// with `total_steps = 0` is stretched over the whole run.
    pub fn config(&self, seed: u64, n_rows: usize) -> CinnConfig {
        let mut schedule = self.schedule.clone();
        if let LrSchedule::CosineAnneal { total_steps, .. } = &mut schedule {
            if *total_steps == 0 {
                *total_steps = self.epochs * n_rows.div_ceil(self.batch_size.max(1));
            }
        }
        CinnConfig {
            arch: CinnArch {
                n_blocks: self.n_blocks,
                hidden: self.hidden.clone(),
                cond_hidden: self.cond_hidden.clone(),
                d_c: self.d_c,
                s_clamp: self.s_clamp,
                dropout: self.dropout,
                seed: sampling::derive_seed(seed, 21),
            },
            train: TrainConfig {
                batch_size: self.batch_size,
                epochs: self.epochs,
                steps_per_epoch: 100,
                schedule,
                adam: AdamConfig {
                    weight_decay: self.weight_decay,
                    ..AdamConfig::default()
                },
                tau: self.tau,
                seed: sampling::derive_seed(seed, 22),
                y_noise_std: self.y_noise_std,
                pilot_rows: 10_000,
                eval_rows: self.eval_rows,
                checkpoint: None,
            },
        }
    }
}

/// Two-fidelity surrogate whose first `n_direct` outputs are reported as
/// is and whose remaining outputs are PCA coefficients decoded to profiles.
#[derive(Clone, Debug)]
pub struct ReducedSurrogate {
    pub surrogate: MfSurrogate,
    pub codec: Option<ProfileCodec>,
    pub n_direct: usize,
    pub mode: PredictMode,
    offset: Vec<f64>,
    /// `k` columns of the linear decode map, each of profile length.
    columns: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedSurrogateDoc {
    pub models: Vec<MfgpModelDoc>,
    pub codec: Option<ProfileCodec>,
    pub n_direct: usize,
    pub mode: PredictMode,
}

impl ReducedSurrogate {
    pub fn new(surrogate: MfSurrogate, codec: Option<ProfileCodec>, n_direct: usize, mode: PredictMode) -> Result<Self> {
        let k = codec.as_ref().map_or(0, ProfileCodec::n_coefficients);
        if surrogate.n_outputs() != n_direct + k {
            return Err(Error::shape(format!(
                "surrogate has {} outputs, expected {n_direct} direct plus {k} coefficients",
                surrogate.n_outputs()
            )));
        }
        let (offset, columns) = match &codec {
            None => (vec![], vec![]),
            Some(c) => {
                let offset = c.decode(&vec![0.0; k])?;
                let mut cols = Vec::with_capacity(k);
                for j in 0..k {
                    let mut e = vec![0.0; k];
                    e[j] = 1.0;
                    let d = c.decode(&e)?;
                    cols.push(d.iter().zip(&offset).map(|(a, b)| a - b).collect());
                }
                (offset, cols)
            }
        };
        Ok(ReducedSurrogate {
            surrogate,
            codec,
            n_direct,
            mode,
            offset,
            columns,
        })
    }

    pub fn to_doc(&self) -> ReducedSurrogateDoc {
        ReducedSurrogateDoc {
            models: self.surrogate.to_docs(),
            codec: self.codec.clone(),
            n_direct: self.n_direct,
            mode: self.mode,
        }
    }

    pub fn from_doc(doc: ReducedSurrogateDoc) -> Result<Self> {
        ReducedSurrogate::new(MfSurrogate::from_docs(doc.models)?, doc.codec, doc.n_direct, doc.mode)
    }

    fn profile_len(&self) -> usize {
        self.offset.len()
    }

    /// Surrogate-space mean and variance (direct outputs then coefficients).
    pub fn predict_reduced(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.surrogate.predict_rows(x, self.mode)
    }
}

impl ForwardModel for ReducedSurrogate {
    fn input_dim(&self) -> usize {
        self.surrogate.dim()
    }

    fn output_dim(&self) -> usize {
        self.n_direct + self.profile_len()
    }

    fn predict_rows(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let (m, v) = self.predict_reduced(x)?;
        let n = x.nrows();
        let p = self.profile_len();
        let mut mean = Array2::zeros((n, self.n_direct + p));
        let mut std = Array2::zeros((n, self.n_direct + p));
        for i in 0..n {
            for j in 0..self.n_direct {
                mean[[i, j]] = m[[i, j]];
                std[[i, j]] = v[[i, j]].max(0.0).sqrt();
            }
            for t in 0..p {
                let mut mu = self.offset[t];
                let mut var = 0.0;
                for (k, col) in self.columns.iter().enumerate() {
                    mu += m[[i, self.n_direct + k]] * col[t];
                    var += v[[i, self.n_direct + k]].max(0.0) * col[t] * col[t];
                }
                mean[[i, self.n_direct + t]] = mu;
                std[[i, self.n_direct + t]] = var.sqrt();
            }
        }
        Ok((mean, std))
    }
}

/// `n` inputs uniform in the box and the forward mean at each, optionally
/// plus one draw of the predictive noise.
pub fn surrogate_pairs(
    forward: &dyn ForwardModel,
    n: usize,
    lo: &[f64],
    hi: &[f64],
    noisy: bool,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if lo.len() != forward.input_dim() || hi.len() != lo.len() {
        return Err(Error::shape("pair bounds do not match the forward model"));
    }
    let mut rng = sampling::rng(seed);
    let x = sampling::uniform_box(&mut rng, n, lo, hi);
    let (mut y, std) = forward.predict_rows(x.view())?;
    if noisy {
        let mut r = sampling::rng(sampling::derive_seed(seed, 1));
        y.zip_mut_with(&std, |v, s| *v += s * sampling::normal(&mut r));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("forward model produced non-finite training targets"));
    }
    Ok((x, y))
}

/// Forward-evaluated objectives of the samples drawn for one target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetConsistency {
    pub index: usize,
    pub target: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Sample `samples` designs per target row, push them through `forward`,
/// and summarize the objectives at `objectives` (column indices of the
/// forward output, which must also index the target).
pub fn inverse_consistency(
    model: &CinnModel,
    forward: &dyn ForwardModel,
    targets: ArrayView2<f64>,
    objectives: &[usize],
    samples: usize,
    seed: u64,
    mut keep: impl FnMut(usize, &[DesignCandidate]) -> Result<()>,
) -> Result<Vec<TargetConsistency>> {
    if forward.output_dim() != targets.ncols() {
        return Err(Error::shape("targets and forward outputs differ in width"));
    }
    let mut out = Vec::with_capacity(targets.nrows());
    for (i, t) in targets.rows().into_iter().enumerate() {
        let q = InverseQuery {
            target: t.to_vec(),
            samples,
            seed: sampling::derive_seed(seed, i as u64),
        };
        let cands = postprocess(cinn_invert(model, &q)?, forward)?;
        let mut mean = Vec::with_capacity(objectives.len());
        let mut std = Vec::with_capacity(objectives.len());
        for &j in objectives {
            let vals: Vec<f64> = cands
                .iter()
                .map(|c| c.forward_mean.as_ref().expect("postprocessed")[j])
                .collect();
            let (m, s) = mean_std(&vals);
            mean.push(m);
            std.push(s);
        }
        keep(i, &cands)?;
        out.push(TargetConsistency {
            index: i,
            target: objectives.iter().map(|&j| t[j]).collect(),
            mean,
            std,
        });
    }
    Ok(out)
}

/// Table rows (R², nRMSE, mean spread) for each objective.
pub fn consistency_rows(names: &[String], per_target: &[TargetConsistency]) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let truth: Vec<f64> = per_target.iter().map(|t| t.target[k]).collect();
        let pred: Vec<f64> = per_target.iter().map(|t| t.mean[k]).collect();
        let mut row = MetricRow::compute(name, &pred, &truth)?;
        row.spread = Some(per_target.iter().map(|t| t.std[k]).sum::<f64>() / per_target.len() as f64);
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Forward-model hold-out metrics, one row per modelled output.
    pub forward: Vec<MetricRow>,
    /// Inverse-consistency metrics, one row per scalar objective.
    pub inverse: Vec<MetricRow>,
    pub targets: Vec<TargetConsistency>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub toy: Vec<RadiusStats>,
    pub r2_threshold: f64,
    pub passed: bool,
}

impl ValidationReport {
    pub fn new(forward: Vec<MetricRow>, inverse: Vec<MetricRow>, targets: Vec<TargetConsistency>, r2_threshold: f64) -> Self {
        let passed = inverse.iter().all(|r| r.r2 >= r2_threshold);
        ValidationReport {
            forward,
            inverse,
            targets,
            toy: vec![],
            r2_threshold,
            passed,
        }
    }
}
