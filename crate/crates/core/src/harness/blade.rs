//! End-to-end pipeline on the 85-input synthetic blade problem: adaptive
//! DOE, two-fidelity surrogates on scalars plus PCA coefficients, surrogate
//! pairs, inverse model, and validation through the forward surrogate.

use std::path::Path;

use ndarray::{s, Array1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::artifact::{meta_for, OutDir};
use super::inverse::{
    consistency_rows, inverse_consistency, surrogate_pairs, CinnSetup, ReducedSurrogate, ValidationReport,
};
use super::metrics::{quantile, MetricRow};
use crate::cinn::{cinn_train, DataSource, DesignCandidate, TrainingCurve};
use crate::error::{Error, Result};
use crate::gp::{HyperPrior, McmcConfig, PredictMode};
use crate::mfgp::{run_adaptive, AdaptiveConfig, Dataset, Fidelity, MfSurrogate, MfgpConfig};
use crate::problems::BladeLikeProblem;
use crate::reduce::{ProfileCodec, ProfileMode};
use crate::sampling;

pub const OBJECTIVE_NAMES: [&str; 2] = ["Efficiency", "Pseudo Reaction"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BladeConfig {
    pub problem_seed: u64,
    pub cost_ratio: f64,
    pub n_high_init: usize,
    pub n_low_init: usize,
    pub rounds: usize,
    pub pool_per_dim: usize,
    /// How the adaptive loop and the pair generator combine MCMC draws.
    pub predict_mode: PredictMode,
    /// Prior median of every β; defaults to `1/d` so that typical pairs
    /// of standardized points stay correlated in high dimension.
    pub beta_median: Option<f64>,
    pub mcmc: McmcConfig,
    pub pca_threshold: f64,
    pub pca_max_k: usize,
    pub profile_mode: ProfileMode,
    pub holdout_fraction: f64,
    pub n_pairs: usize,
    /// Add one draw of predictive noise to every surrogate pair.
    pub pair_noise: bool,
    pub cinn: CinnSetup,
    pub n_targets: usize,
    pub samples: usize,
    pub r2_threshold: f64,
    /// How many targets get profile-vs-target CSVs.
    pub profile_examples: usize,
}

impl Default for BladeConfig {
    fn default() -> Self {
        BladeConfig {
            problem_seed: 0,
            cost_ratio: 5.0,
            n_high_init: 40,
            n_low_init: 80,
            rounds: 30,
            pool_per_dim: 2,
            predict_mode: PredictMode::Map,
            beta_median: None,
            mcmc: McmcConfig {
                n_steps: 2000,
                n_burn: 1500,
                n_keep: 10,
                ..McmcConfig::default()
            },
            pca_threshold: 0.9,
            pca_max_k: 8,
            profile_mode: ProfileMode::Joint,
            holdout_fraction: 0.1,
            n_pairs: 10_000,
            pair_noise: false,
            cinn: CinnSetup::desk(),
            n_targets: 100,
            samples: 1000,
            r2_threshold: 0.9,
            profile_examples: 2,
        }
    }
}

impl BladeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_high_init < 2 || self.n_low_init < 2 {
            return Err(Error::config("need at least 2 initial rows of each fidelity"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::config("holdout_fraction must be in [0, 1)"));
        }
        if self.n_targets < 2 || self.samples == 0 || self.n_pairs < 2 {
            return Err(Error::config("need at least 2 targets, 2 pairs and 1 sample"));
        }
        if self.cost_ratio <= 1.0 {
            return Err(Error::config("cost_ratio must exceed 1"));
        }
        Ok(())
    }

    fn mfgp(&self, d: usize, seed: u64) -> MfgpConfig {
        let prior = HyperPrior::with_beta_median(d, self.beta_median.unwrap_or(1.0 / d as f64));
        MfgpConfig {
            eta_prior: Some(prior.clone()),
            delta_prior: Some(prior),
            mcmc: McmcConfig {
                seed,
                ..self.mcmc.clone()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BladeReport {
    pub n_low: usize,
    pub n_high: usize,
    pub equivalent_cost: f64,
    pub n_holdout: usize,
    pub pca_k: usize,
    pub pca_energy: f64,
    pub initial_eval_nll: f64,
    pub final_eval_nll: f64,
    /// Share of inverse samples outside the unit box.
    pub outside_box: f64,
    pub validation: ValidationReport,
}

#[derive(Serialize)]
struct StageFailure<'a> {
    stage: &'a str,
    error: String,
}

/// Run `f`, and on error write `failure.json` naming the stage.
fn stage<T>(out: &mut OutDir, name: &str, f: impl FnOnce(&mut OutDir) -> Result<T>) -> Result<T> {
    log::info!("blade: stage {name}");
    match f(out) {
        Ok(v) => Ok(v),
        Err(e) => {
            let _ = out.json(
                "failure.json",
                "stage_failure",
                &StageFailure {
                    stage: name,
                    error: e.to_string(),
                },
            );
            Err(e)
        }
    }
}

fn reduced_row(problem: &BladeLikeProblem, codec: &ProfileCodec, x: &[f64], f: Fidelity) -> Result<Vec<f64>> {
    let (mut s, p) = problem.eval_fidelity(x, f)?;
    s.extend(codec.encode(&p)?);
    Ok(s)
}

fn output_names(k: usize) -> Vec<String> {
    let mut n: Vec<String> = OBJECTIVE_NAMES.iter().map(|s| s.to_string()).collect();
    n.extend((1..=k).map(|i| format!("PCA-{i}")));
    n
}

fn write_profiles(
    out: &mut OutDir,
    idx: usize,
    target: &[f64],
    cands: &[DesignCandidate],
    n_scalars: usize,
    n_span: usize,
) -> Result<()> {
    let means: Vec<&Vec<f64>> = cands.iter().map(|c| c.forward_mean.as_ref().expect("postprocessed")).collect();
    let mut rows = Vec::with_capacity(n_span);
    for i in 0..n_span {
        let s = i as f64 / (n_span - 1) as f64;
        let mut row = vec![s];
        for ch in 0..2 {
            let col = n_scalars + ch * n_span + i;
            let vals: Vec<f64> = means.iter().map(|m| m[col]).collect();
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            row.extend([target[col], mu, quantile(&vals, 0.025), quantile(&vals, 0.975)]);
        }
        rows.push(row);
    }
    let header = [
        "span",
        "pressure_target",
        "pressure_mean",
        "pressure_lo95",
        "pressure_hi95",
        "swirl_target",
        "swirl_mean",
        "swirl_lo95",
        "swirl_hi95",
    ]
    .map(String::from);
    out.table(&format!("profile_target{idx}.csv"), "profile_vs_target", &header, &rows)?;
    Ok(())
}

fn write_curve(out: &mut OutDir, curve: &TrainingCurve) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..curve.epoch_nll.len())
        .map(|e| vec![(e + 1) as f64, curve.epoch_nll[e], curve.eval_nll[e], curve.lr[e]])
        .collect();
    let header = ["epoch", "train_nll", "eval_nll", "lr"].map(String::from);
    out.table("training_curve.csv", "training_curve", &header, &rows)?;
    Ok(())
}

/// Initial space-filling design at both fidelities, PCA basis of its
/// profiles, then `cfg.rounds` adaptive rounds. Passing `start` skips the
/// initial design and continues from an existing basis and dataset.
pub fn blade_design(
    cfg: &BladeConfig,
    seed: u64,
    start: Option<(ProfileCodec, Dataset)>,
    out: &mut OutDir,
) -> Result<(ProfileCodec, Dataset)> {
    cfg.validate()?;
    let problem = BladeLikeProblem::new(cfg.problem_seed);
    let d = problem.d_in;
    let ns = problem.n_scalars();
    let (codec, init) = match start {
        Some(v) => v,
        None => stage(out, "initial_design", |out| {
            let mut rng = sampling::rng(sampling::derive_seed(seed, 1));
            let xl = sampling::latin_hypercube(&mut rng, cfg.n_low_init, d);
            let xh = sampling::latin_hypercube(&mut rng, cfg.n_high_init, d);
            let yl = problem.eval_rows(&xl, Fidelity::Low)?;
            let yh = problem.eval_rows(&xh, Fidelity::High)?;
            let profiles = ndarray::concatenate(Axis(0), &[yl.slice(s![.., ns..]), yh.slice(s![.., ns..])])
                .map_err(|e| Error::shape(e.to_string()))?;
            let codec = ProfileCodec::fit(
                profiles.view(),
                &[problem.n_span, problem.n_span],
                cfg.profile_mode,
                cfg.pca_threshold,
                Some(cfg.pca_max_k),
            )?;
            let m = ns + codec.n_coefficients();
            let mut ds = Dataset::empty(d, m, cfg.cost_ratio);
            for (x, f) in [(&xl, Fidelity::Low), (&xh, Fidelity::High)] {
                for row in x.rows() {
                    let y = reduced_row(&problem, &codec, row.as_slice().expect("row"), f)?;
                    ds.push(row, Array1::from(y).view(), f)?;
                }
            }
            out.json("pca_codec.json", "pca_codec", &codec)?;
            Ok((codec, ds))
        })?,
    };
    if init.d() != d || init.m() != ns + codec.n_coefficients() {
        return Err(Error::shape("dataset does not match the blade problem and basis"));
    }
    let names = output_names(codec.n_coefficients());
    let doe = stage(out, "adaptive_sampling", |out| {
        let acfg = AdaptiveConfig {
            rounds: cfg.rounds,
            pool_per_dim: cfg.pool_per_dim,
            refit_every: 0,
            seed: sampling::derive_seed(seed, 2),
            lo: vec![0.0; d],
            hi: vec![1.0; d],
            budget: None,
            predict_mode: cfg.predict_mode,
        };
        let mf = cfg.mfgp(d, sampling::derive_seed(seed, 3));
        let outcome = run_adaptive(
            init,
            None,
            &mf,
            &acfg,
            |x, f| reduced_row(&problem, &codec, x, f),
            |_, _, _| Ok(()),
        )?;
        let mut ds = outcome.dataset;
        ds.y_names = names.clone();
        let (_, w) = out.csv("doe.csv", "doe_dataset")?;
        ds.write_csv(w, None)?;
        let hist: Vec<Vec<f64>> = outcome
            .history
            .iter()
            .map(|r| {
                vec![
                    r.round as f64,
                    f64::from(u8::from(r.fidelity == Fidelity::High)),
                    r.score,
                    r.equivalent_cost,
                ]
            })
            .collect();
        let header = ["round", "high", "score", "equivalent_cost"].map(String::from);
        out.table("adaptive_history.csv", "adaptive_history", &header, &hist)?;
        Ok(ds)
    })?;
    Ok((codec, doe))
}

/// Run the whole pipeline; artifacts go to `dir`.
pub fn run_blade_like(cfg: &BladeConfig, seed: u64, dir: &Path) -> Result<BladeReport> {
    cfg.validate()?;
    let mut out = OutDir::create(dir, meta_for(cfg, seed, "blade_like")?)?;
    let problem = BladeLikeProblem::new(cfg.problem_seed);
    let d = problem.d_in;
    let ns = problem.n_scalars();
    let lo = vec![0.0; d];
    let hi = vec![1.0; d];

    let (codec, doe) = blade_design(cfg, seed, None, &mut out)?;
    let k = codec.n_coefficients();
    let names = output_names(k);

    // hold out a share of the high-fidelity rows, fit on the rest
    let (forward, forward_rows, n_holdout) = stage(&mut out, "forward_model", |out| {
        let mut high = doe.rows_of(Fidelity::High);
        high.shuffle(&mut sampling::rng(sampling::derive_seed(seed, 4)));
        let n_hold = ((high.len() as f64 * cfg.holdout_fraction).ceil() as usize).max(2);
        if high.len() < n_hold + 2 {
            return Err(Error::config("too few high-fidelity rows for a hold-out split"));
        }
        let mut held = high[..n_hold].to_vec();
        held.sort_unstable();
        let train: Vec<usize> = (0..doe.n_rows()).filter(|i| !held.contains(i)).collect();
        let fit_ds = doe.select_rows(&train);
        let test = doe.select_rows(&held);
        let sur = MfSurrogate::fit(&fit_ds, &cfg.mfgp(d, sampling::derive_seed(seed, 5)))?;
        let (pred, _) = sur.predict_rows(test.x.view(), cfg.predict_mode)?;
        let rows = (0..sur.n_outputs())
            .map(|j| MetricRow::compute(&names[j], &pred.column(j).to_vec(), &test.y.column(j).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let forward = ReducedSurrogate::new(sur, Some(codec.clone()), ns, cfg.predict_mode)?;
        out.json("forward_model.json", "forward_model", &forward.to_doc())?;
        Ok((forward, rows, n_hold))
    })?;

    let trained = stage(&mut out, "inverse_training", |out| {
        let (x, y) = surrogate_pairs(&forward, cfg.n_pairs, &lo, &hi, cfg.pair_noise, sampling::derive_seed(seed, 6))?;
        let ccfg = cfg.cinn.config(seed, cfg.n_pairs);
        let t = cinn_train(
            DataSource::Fixed {
                x: x.view(),
                y: y.view(),
            },
            &ccfg,
        )?;
        write_curve(out, &t.curve)?;
        out.json("cinn_model.json", "cinn_model", &t.model)?;
        Ok(t)
    })?;

    let (validation, outside) = stage(&mut out, "validation", |out| {
        let (_, targets) = surrogate_pairs(&forward, cfg.n_targets, &lo, &hi, false, sampling::derive_seed(seed, 7))?;
        let objectives: Vec<usize> = (0..ns).collect();
        let mut outside = 0usize;
        let mut total = 0usize;
        let mut examples = Vec::new();
        let per_target = inverse_consistency(
            &trained.model,
            &forward,
            targets.view(),
            &objectives,
            cfg.samples,
            sampling::derive_seed(seed, 8),
            |i, cands| {
                total += cands.len();
                outside += cands
                    .iter()
                    .filter(|c| c.x.iter().any(|v| !(0.0..=1.0).contains(v)))
                    .count();
                if i < cfg.profile_examples {
                    examples.push((i, cands.to_vec()));
                }
                Ok(())
            },
        )?;
        for (i, cands) in &examples {
            write_profiles(out, *i, &targets.row(*i).to_vec(), cands, ns, problem.n_span)?;
        }
        let obj_names: Vec<String> = OBJECTIVE_NAMES.iter().map(|s| s.to_string()).collect();
        let inverse_rows = consistency_rows(&obj_names, &per_target)?;
        let rows: Vec<Vec<f64>> = per_target
            .iter()
            .map(|t| {
                let mut r = vec![t.index as f64];
                for j in 0..ns {
                    r.extend([t.target[j], t.mean[j], t.std[j]]);
                }
                r
            })
            .collect();
        let header = [
            "target",
            "efficiency_target",
            "efficiency_mean",
            "efficiency_std",
            "pseudo_reaction_target",
            "pseudo_reaction_mean",
            "pseudo_reaction_std",
        ]
        .map(String::from);
        out.table("inverse_consistency.csv", "inverse_consistency", &header, &rows)?;
        let report = ValidationReport::new(forward_rows.clone(), inverse_rows, per_target, cfg.r2_threshold);
        out.json("validation_report.json", "validation_report", &report)?;
        Ok((report, outside as f64 / total.max(1) as f64))
    })?;

    let report = BladeReport {
        n_low: doe.count(Fidelity::Low),
        n_high: doe.count(Fidelity::High),
        equivalent_cost: doe.equivalent_cost(),
        n_holdout,
        pca_k: k,
        pca_energy: codec.energy_captured(),
        initial_eval_nll: trained.curve.initial_eval_nll,
        final_eval_nll: trained.curve.eval_nll.last().copied().unwrap_or(f64::NAN),
        outside_box: outside,
        validation,
    };
    out.json("blade_report.json", "blade_report", &report)?;
    Ok(report)
}

/// Tiny settings for smoke tests and determinism checks.
pub fn smoke_config() -> BladeConfig {
    BladeConfig {
        n_high_init: 12,
        n_low_init: 12,
        rounds: 2,
        pool_per_dim: 1,
        mcmc: McmcConfig {
            n_steps: 60,
            n_burn: 40,
            n_keep: 2,
            ..McmcConfig::default()
        },
        n_pairs: 200,
        cinn: CinnSetup {
            n_blocks: 2,
            hidden: vec![16],
            cond_hidden: vec![16],
            d_c: 4,
            epochs: 2,
            batch_size: 50,
            eval_rows: 64,
            ..CinnSetup::desk()
        },
        n_targets: 4,
        samples: 20,
        profile_examples: 1,
        ..BladeConfig::default()
    }
}
