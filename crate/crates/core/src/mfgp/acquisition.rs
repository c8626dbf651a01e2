use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Fidelity};
use super::model::{MfSurrogate, MfgpConfig, MfgpModel};
use crate::error::{Error, Result};
use crate::gp::{McmcConfig, PredictMode};
use crate::sampling::{self, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionResult {
    pub x: Vec<f64>,
    pub index: usize,
    pub fidelity: Fidelity,
    pub score: f64,
    /// `[low, high]` score per candidate.
    pub table: Vec<[f64; 2]>,
}

/// Variance reduction per unit cost. Low: `Var[η]`; high:
/// `(Var[η] + Var[δ]) / cost_ratio`.
pub fn adaptive_select(model: &MfgpModel, candidates: ArrayView2<f64>, cost_ratio: f64) -> Result<AcquisitionResult> {
    adaptive_select_weighted(&[model], &[1.0], candidates, cost_ratio, PredictMode::Mixture)
}

/// Several outputs: scores are `Σ_j w_j · score_j`.
///
/// The argmax scans candidates in index order, low before high, and only
/// moves on a score larger by more than round-off (`1e-9` of the summed
/// prior variances), so near-zero ties at data points go to the first.
pub fn adaptive_select_weighted(
    models: &[&MfgpModel],
    weights: &[f64],
    candidates: ArrayView2<f64>,
    cost_ratio: f64,
    mode: PredictMode,
) -> Result<AcquisitionResult> {
    let c = candidates.nrows();
    if c == 0 {
        return Err(Error::config("empty candidate set"));
    }
    if models.is_empty() || models.len() != weights.len() {
        return Err(Error::shape("need one weight per model"));
    }
    if !(cost_ratio > 0.0) {
        return Err(Error::config("cost_ratio must be positive"));
    }
    let mut table = vec![[0.0f64; 2]; c];
    for (m, &w) in models.iter().zip(weights) {
        let (e, d) = m.predict_stages(candidates, mode)?;
        for i in 0..c {
            table[i][0] += w * e[i].1;
            table[i][1] += w * (e[i].1 + d[i].1) / cost_ratio;
        }
    }
    let scale: f64 = models
        .iter()
        .zip(weights)
        .map(|(m, w)| w.abs() * (m.eta.prior_var() + m.delta.prior_var()))
        .sum();
    let tol = 1e-9 * scale;
    let mut best = (0usize, Fidelity::Low, f64::NEG_INFINITY);
    for (i, row) in table.iter().enumerate() {
        for (f, &v) in [Fidelity::Low, Fidelity::High].into_iter().zip(row.iter()) {
            if !v.is_finite() {
                return Err(Error::numeric(format!("non-finite acquisition score at candidate {i}")));
            }
            if v > best.2 + tol || best.2 == f64::NEG_INFINITY {
                best = (i, f, v);
            }
        }
    }
    Ok(AcquisitionResult {
        x: candidates.row(best.0).to_vec(),
        index: best.0,
        fidelity: best.1,
        score: best.2,
        table,
    })
}

/// Shifted-Halton pool of `n` points in the box `[lo, hi]`.
pub fn candidate_pool(rng: &mut SeededRng, n: usize, lo: &[f64], hi: &[f64]) -> Array2<f64> {
    let mut p = sampling::shifted_halton(rng, n, lo.len(), 0);
    sampling::scale_to_box(&mut p, lo, hi);
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub rounds: usize,
    /// Pool size is `pool_per_dim · d`.
    #[serde(default = "default_pool")]
    pub pool_per_dim: usize,
    /// Resample hyperparameters every this many rounds; 0 keeps the draws
    /// from the initial fit and only conditions on new data.
    #[serde(default)]
    pub refit_every: usize,
    pub seed: u64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Stop before the equivalent cost would exceed this.
    #[serde(default)]
    pub budget: Option<f64>,
    #[serde(default)]
    pub predict_mode: PredictMode,
}

fn default_pool() -> usize {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub x: Vec<f64>,
    pub fidelity: Fidelity,
    pub score: f64,
    pub n_low: usize,
    pub n_high: usize,
    pub equivalent_cost: f64,
}

#[derive(Clone, Debug)]
pub struct AdaptiveOutcome {
    pub surrogate: MfSurrogate,
    pub dataset: Dataset,
    pub history: Vec<RoundRecord>,
}

fn best_of(table: &[[f64; 2]], f: Fidelity) -> usize {
    let col = usize::from(f == Fidelity::High);
    let mut bi = 0;
    for (i, r) in table.iter().enumerate() {
        if r[col] > table[bi][col] {
            bi = i;
        }
    }
    bi
}

/// Grow `dataset` one evaluation per round. `eval` runs the simulator;
/// `observe` sees the surrogate after the initial fit (round 0) and after
/// every round.
///
/// Outputs are weighted by the inverse of their prior variance so that no
/// single output dominates the acquisition.
pub fn run_adaptive<E, O>(
    mut dataset: Dataset,
    initial: Option<MfSurrogate>,
    mf: &MfgpConfig,
    cfg: &AdaptiveConfig,
    mut eval: E,
    mut observe: O,
) -> Result<AdaptiveOutcome>
where
    E: FnMut(&[f64], Fidelity) -> Result<Vec<f64>>,
    O: FnMut(usize, &MfSurrogate, &Dataset) -> Result<()>,
{
    let d = dataset.d();
    if cfg.lo.len() != d || cfg.hi.len() != d {
        return Err(Error::shape("adaptive bounds do not match input dimension"));
    }
    let mut surrogate = match initial {
        Some(s) => s,
        None => MfSurrogate::fit(&dataset, mf)?,
    };
    observe(0, &surrogate, &dataset)?;
    let mut history = Vec::new();
    for round in 0..cfg.rounds {
        let mut rng = sampling::rng(sampling::derive_seed(cfg.seed, round as u64));
        let pool = candidate_pool(&mut rng, cfg.pool_per_dim.max(1) * d, &cfg.lo, &cfg.hi);
        let models: Vec<&MfgpModel> = surrogate.models.iter().collect();
        let weights: Vec<f64> = models
            .iter()
            .map(|m| 1.0 / (m.eta.prior_var() + m.delta.prior_var()).max(1e-300))
            .collect();
        let acq = adaptive_select_weighted(&models, &weights, pool.view(), dataset.cost_ratio, cfg.predict_mode)?;
        let (mut idx, mut fid, mut score) = (acq.index, acq.fidelity, acq.score);
        if let Some(b) = cfg.budget {
            let step = |f: Fidelity| if f == Fidelity::High { 1.0 } else { 1.0 / dataset.cost_ratio };
            let now = dataset.equivalent_cost();
            if now + step(fid) > b + 1e-12 {
                if fid == Fidelity::High && now + step(Fidelity::Low) <= b + 1e-12 {
                    fid = Fidelity::Low;
                    idx = best_of(&acq.table, fid);
                    score = acq.table[idx][0];
                } else {
                    break;
                }
            }
        }
        let x = pool.row(idx).to_vec();
        let y = eval(&x, fid)?;
        if y.len() != dataset.m() {
            return Err(Error::shape(format!("evaluator returned {} outputs, expected {}", y.len(), dataset.m())));
        }
        dataset.push(pool.row(idx), Array1::from(y).view(), fid)?;
        surrogate = if cfg.refit_every > 0 && (round + 1) % cfg.refit_every == 0 {
            let mf_round = MfgpConfig {
                mcmc: McmcConfig {
                    seed: sampling::derive_seed(mf.mcmc.seed, 1000 + round as u64),
                    ..mf.mcmc.clone()
                },
                ..mf.clone()
            };
            MfSurrogate::fit(&dataset, &mf_round)?
        } else {
            surrogate.update_data(&dataset)?
        };
        history.push(RoundRecord {
            round: round + 1,
            x,
            fidelity: fid,
            score,
            n_low: dataset.count(Fidelity::Low),
            n_high: dataset.count(Fidelity::High),
            equivalent_cost: dataset.equivalent_cost(),
        });
        observe(round + 1, &surrogate, &dataset)?;
    }
    Ok(AdaptiveOutcome {
        surrogate,
        dataset,
        history,
    })
}
