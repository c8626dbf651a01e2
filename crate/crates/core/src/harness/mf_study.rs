//! Cost study on the synthetic fidelity pair: adaptive two-fidelity GP vs
//! single-fidelity GPs on space-filling high-fidelity designs.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::artifact::{meta_for, OutDir};
use super::metrics::nrmse;
use crate::error::{Error, Result};
use crate::gp::{mcmc_fit, HyperPrior, McmcConfig, PredictMode};
use crate::mfgp::{run_adaptive, AdaptiveConfig, Dataset, Fidelity, MfSurrogate, MfgpConfig};
use crate::problems::{synth_mf_eval, synth_mf_pair};
use crate::sampling;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfStudyConfig {
    pub seeds: Vec<u64>,
    pub cost_ratio: f64,
    pub n_high_init: usize,
    pub n_low_init: usize,
    /// Equivalent-cost budget for the adaptive run.
    pub budget: f64,
    /// Set to false for a high-fidelity-only budget (degenerate mode).
    pub use_low: bool,
    pub pool_per_dim: usize,
    pub refit_every: usize,
    pub mcmc: McmcConfig,
    /// High-fidelity sample sizes of the single-fidelity curve.
    pub sf_sizes: Vec<usize>,
    pub n_holdout: usize,
}

impl Default for MfStudyConfig {
    fn default() -> Self {
        MfStudyConfig {
            seeds: (0..5).collect(),
            cost_ratio: 5.0,
            n_high_init: 3,
            n_low_init: 5,
            budget: 10.0,
            use_low: true,
            pool_per_dim: 500,
            refit_every: 0,
            mcmc: McmcConfig {
                n_steps: 3000,
                n_burn: 1000,
                n_keep: 30,
                ..McmcConfig::default()
            },
            sf_sizes: vec![4, 6, 8, 10],
            n_holdout: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub n_low: usize,
    pub n_high: usize,
    pub equivalent_cost: f64,
    pub mf_nrmse: f64,
    /// Single-fidelity GP on `floor(equivalent_cost)` high-fidelity points.
    pub sf_nrmse: f64,
    pub mf_wins: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfStudyReport {
    pub seeds: Vec<SeedResult>,
    pub wins: usize,
    /// True when no low-fidelity budget was available, so η rests on the
    /// two seed points only.
    pub degenerate: bool,
}

fn holdout(n: usize) -> (Array2<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let truth = x.iter().map(|&v| synth_mf_pair(v).1).collect();
    (Array2::from_shape_vec((n, 1), x).expect("column"), truth)
}

fn initial_design(cfg: &MfStudyConfig, seed: u64) -> Result<Dataset> {
    let mut rng = sampling::rng(sampling::derive_seed(seed, 1));
    let n_low = if cfg.use_low { cfg.n_low_init } else { 2 };
    let xl = sampling::latin_hypercube(&mut rng, n_low, 1);
    let xh = sampling::latin_hypercube(&mut rng, cfg.n_high_init, 1);
    let mut ds = Dataset::empty(1, 1, cfg.cost_ratio);
    for (xs, f) in [(xl, Fidelity::Low), (xh, Fidelity::High)] {
        for &v in xs.column(0) {
            ds.push(Array1::from(vec![v]).view(), Array1::from(vec![synth_mf_eval(v, f)]).view(), f)?;
        }
    }
    Ok(ds)
}

fn sf_nrmse(cfg: &MfStudyConfig, seed: u64, n: usize, xq: &Array2<f64>, truth: &[f64]) -> Result<f64> {
    let mut rng = sampling::rng(sampling::derive_seed(seed, 500 + n as u64));
    let xs = sampling::latin_hypercube(&mut rng, n, 1);
    let ys = xs.column(0).mapv(|v| synth_mf_pair(v).1);
    let mc = McmcConfig {
        seed: sampling::derive_seed(seed, 3),
        ..cfg.mcmc.clone()
    };
    let gp = mcmc_fit(xs, ys, &HyperPrior::default_for(1), &mc)?;
    let pred = gp.predict_mean_batch(xq.view(), PredictMode::Mixture)?;
    nrmse(&pred, truth)
}

/// Run every seed; writes the MF cost curve, the SF curve and a summary.
pub fn run_mf_study(cfg: &MfStudyConfig, seed: u64, dir: &Path) -> Result<MfStudyReport> {
    if cfg.seeds.is_empty() || cfg.n_high_init < 2 || cfg.n_holdout < 2 {
        return Err(Error::config("need seeds, at least 2 initial high-fidelity points and a hold-out set"));
    }
    let mut out = OutDir::create(dir, meta_for(cfg, seed, "mf_study")?)?;
    let (xq, truth) = holdout(cfg.n_holdout);
    let mut mf_rows = Vec::new();
    let mut sf_rows = Vec::new();
    let mut results = Vec::new();
    for &s in &cfg.seeds {
        let run_seed = sampling::derive_seed(seed, s);
        let ds = initial_design(cfg, run_seed)?;
        let mf = MfgpConfig {
            mcmc: McmcConfig {
                seed: sampling::derive_seed(run_seed, 2),
                ..cfg.mcmc.clone()
            },
            ..MfgpConfig::default()
        };
        let mut curve: Vec<(f64, usize, usize, f64)> = Vec::new();
        let observe = |_: usize, sur: &MfSurrogate, d: &Dataset| -> Result<()> {
            let p = sur.models[0].predict_batch(xq.view(), PredictMode::Mixture)?;
            let mean: Vec<f64> = p.iter().map(|v| v.0).collect();
            curve.push((
                d.equivalent_cost(),
                d.count(Fidelity::High),
                d.count(Fidelity::Low),
                nrmse(&mean, &truth)?,
            ));
            Ok(())
        };
        let outcome = if cfg.use_low {
            let acfg = AdaptiveConfig {
                rounds: usize::MAX,
                pool_per_dim: cfg.pool_per_dim,
                refit_every: cfg.refit_every,
                seed: sampling::derive_seed(run_seed, 4),
                lo: vec![0.0],
                hi: vec![1.0],
                budget: Some(cfg.budget),
                predict_mode: PredictMode::Mixture,
            };
            run_adaptive(ds, None, &mf, &acfg, |x, f| Ok(vec![synth_mf_eval(x[0], f)]), observe)?
        } else {
            // high-fidelity points only, space-filling up to the budget
            let mut ds = ds;
            let extra = (cfg.budget - ds.equivalent_cost()).floor().max(0.0) as usize;
            let mut rng = sampling::rng(sampling::derive_seed(run_seed, 5));
            for &v in sampling::latin_hypercube(&mut rng, extra, 1).column(0) {
                let y = synth_mf_eval(v, Fidelity::High);
                ds.push(Array1::from(vec![v]).view(), Array1::from(vec![y]).view(), Fidelity::High)?;
            }
            run_adaptive(
                ds,
                None,
                &mf,
                &AdaptiveConfig {
                    rounds: 0,
                    pool_per_dim: 1,
                    refit_every: 0,
                    seed: 0,
                    lo: vec![0.0],
                    hi: vec![1.0],
                    budget: None,
                    predict_mode: PredictMode::Mixture,
                },
                |_, _| Err(Error::config("no evaluations in degenerate mode")),
                observe,
            )?
        };
        let last = *curve.last().expect("observed at round 0");
        for c in &curve {
            mf_rows.push(vec![s as f64, c.0, c.1 as f64, c.2 as f64, c.3]);
        }
        for &n in &cfg.sf_sizes {
            sf_rows.push(vec![s as f64, n as f64, sf_nrmse(cfg, run_seed, n, &xq, &truth)?]);
        }
        let matched = last.0.floor() as usize;
        let sf = sf_nrmse(cfg, run_seed, matched.max(2), &xq, &truth)?;
        log::info!("mf study seed {s}: cost {:.1} mf {:.4} sf {:.4}", last.0, last.3, sf);
        results.push(SeedResult {
            seed: s,
            n_low: outcome.dataset.count(Fidelity::Low),
            n_high: outcome.dataset.count(Fidelity::High),
            equivalent_cost: last.0,
            mf_nrmse: last.3,
            sf_nrmse: sf,
            mf_wins: last.3 <= sf,
        });
    }
    let header = |h: &[&str]| h.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    out.table(
        "mf_curve.csv",
        "mf_cost_curve",
        &header(&["seed", "equivalent_cost", "n_high", "n_low", "nrmse"]),
        &mf_rows,
    )?;
    out.table("sf_curve.csv", "sf_cost_curve", &header(&["seed", "n_high", "nrmse"]), &sf_rows)?;
    let report = MfStudyReport {
        wins: results.iter().filter(|r| r.mf_wins).count(),
        seeds: results,
        degenerate: !cfg.use_low,
    };
    out.json("mf_study.json", "mf_study_summary", &report)?;
    Ok(report)
}
