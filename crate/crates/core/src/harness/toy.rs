//! Ring-shaped toy inverse problem: train online, sample, score against the
//! exact posterior.

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::artifact::{meta_for, OutDir};
use super::metrics::{median, quantile};
use crate::cinn::{cinn_invert, cinn_train, CinnArch, CinnConfig, DataSource, InverseQuery, TrainConfig, TrainingCurve};
use crate::error::{Error, Result};
use crate::numcore::{AdamConfig, LrSchedule};
use crate::problems::ToyProblem;
use crate::sampling;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub problem: ToyProblem,
    /// Single-sided coupling blocks; two make one coupling pair.
    pub n_blocks: usize,
    pub hidden: Vec<usize>,
    pub cond_hidden: Vec<usize>,
    pub d_c: usize,
    pub s_clamp: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub steps_per_epoch: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub eval_rows: usize,
    pub targets: Vec<f64>,
    pub samples: usize,
    pub hist_bins: usize,
    /// Exact posterior draws per target for comparison; 0 skips the oracle.
    pub oracle_samples: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            problem: ToyProblem::default(),
            n_blocks: 8,
            hidden: vec![64, 64],
            cond_hidden: vec![32],
            d_c: 16,
            s_clamp: 2.0,
            dropout: 0.0,
            batch_size: 128,
            steps: 20_000,
            steps_per_epoch: 100,
            lr_start: 3e-3,
            lr_end: 1e-5,
            eval_rows: 2048,
            targets: vec![0.0, 2.0, 10.0],
            samples: 1000,
            hist_bins: 40,
            oracle_samples: 1000,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.problem.d_x != 2 {
            return Err(Error::config("the toy experiment plots a 2-d input"));
        }
        if self.steps == 0 || self.steps_per_epoch == 0 || !self.steps.is_multiple_of(self.steps_per_epoch) {
            return Err(Error::config("steps must be a positive multiple of steps_per_epoch"));
        }
        if self.samples == 0 || self.hist_bins == 0 {
            return Err(Error::config("samples and hist_bins must be positive"));
        }
        Ok(())
    }

    pub fn cinn_config(&self, seed: u64) -> CinnConfig {
        CinnConfig {
            arch: CinnArch {
                n_blocks: self.n_blocks,
                hidden: self.hidden.clone(),
                cond_hidden: self.cond_hidden.clone(),
                d_c: self.d_c,
                s_clamp: self.s_clamp,
                dropout: self.dropout,
                seed: sampling::derive_seed(seed, 11),
            },
            train: TrainConfig {
                batch_size: self.batch_size,
                epochs: self.steps / self.steps_per_epoch,
                steps_per_epoch: self.steps_per_epoch,
                schedule: LrSchedule::CosineAnneal {
                    lr_start: self.lr_start,
                    lr_end: self.lr_end,
                    total_steps: self.steps,
                },
                adam: AdamConfig::default(),
                tau: 0.0,
                seed: sampling::derive_seed(seed, 12),
                y_noise_std: 0.0,
                pilot_rows: 10_000,
                eval_rows: self.eval_rows,
                checkpoint: None,
            },
        }
    }
}

/// Radius and consistency summary of one set of samples at target `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusStats {
    pub target: f64,
    pub ring_radius: f64,
    pub n: usize,
    pub median_radius: f64,
    pub radius_q25: f64,
    pub radius_q75: f64,
    /// Median of `|‖x‖ − √y|`.
    pub median_ring_deviation: f64,
    /// Mean of `|f(x) − y|` under the noiseless forward.
    pub mean_forward_error: f64,
    pub mass_inside_r2: f64,
    pub outside_domain: f64,
}

impl RadiusStats {
    pub fn of(problem: &ToyProblem, target: f64, x: &Array2<f64>) -> RadiusStats {
        let ring = target.max(0.0).sqrt();
        let r: Vec<f64> = x.rows().into_iter().map(|row| row.dot(&row).sqrt()).collect();
        let dev: Vec<f64> = r.iter().map(|v| (v - ring).abs()).collect();
        let n = r.len();
        let fe = x
            .rows()
            .into_iter()
            .map(|row| (problem.objective(row.as_slice().expect("row")) - target).abs())
            .sum::<f64>()
            / n as f64;
        let outside = x
            .rows()
            .into_iter()
            .filter(|row| !problem.in_domain(row.as_slice().expect("row")))
            .count();
        RadiusStats {
            target,
            ring_radius: ring,
            n,
            median_radius: median(&r),
            radius_q25: quantile(&r, 0.25),
            radius_q75: quantile(&r, 0.75),
            median_ring_deviation: median(&dev),
            mean_forward_error: fe,
            mass_inside_r2: r.iter().filter(|&&v| v < 2.0).count() as f64 / n as f64,
            outside_domain: outside as f64 / n as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub model: Vec<RadiusStats>,
    /// Same statistics for exact posterior draws, when requested.
    pub oracle: Vec<RadiusStats>,
    pub initial_eval_nll: f64,
    pub final_eval_nll: f64,
    pub steps: usize,
}

/// Density histogram on the problem domain; cells are `bins × bins`.
pub fn histogram2d(x: &Array2<f64>, half_width: f64, bins: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let edges: Vec<f64> = (0..=bins)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / bins as f64)
        .collect();
    let w = 2.0 * half_width / bins as f64;
    let mut counts = vec![vec![0.0; bins]; bins];
    for row in x.rows() {
        let (a, b) = (row[0], row[1]);
        if a.abs() > half_width || b.abs() > half_width {
            continue;
        }
        let i = (((a + half_width) / w) as usize).min(bins - 1);
        let j = (((b + half_width) / w) as usize).min(bins - 1);
        counts[j][i] += 1.0;
    }
    let norm = 1.0 / (x.nrows().max(1) as f64 * w * w);
    for r in &mut counts {
        r.iter_mut().for_each(|c| *c *= norm);
    }
    (edges, counts)
}

fn label(y: f64) -> String {
    format!("{y}").replace('.', "p").replace('-', "m")
}

fn write_curve(out: &mut OutDir, curve: &TrainingCurve) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..curve.epoch_nll.len())
        .map(|e| vec![(e + 1) as f64, curve.epoch_nll[e], curve.eval_nll[e], curve.lr[e]])
        .collect();
    let header = ["epoch", "train_nll", "eval_nll", "lr"].map(String::from);
    out.table("training_curve.csv", "training_curve", &header, &rows)?;
    Ok(())
}

/// Train on fresh minibatches, then sample every target and write samples,
/// heat-map grids, radius statistics and the training curve to `dir`.
pub fn run_toy(cfg: &ToyConfig, seed: u64, dir: &Path) -> Result<ToyReport> {
    cfg.validate()?;
    let mut out = OutDir::create(dir, meta_for(cfg, seed, "toy")?)?;
    let problem = cfg.problem.clone();
    let ccfg = cfg.cinn_config(seed);
    let src_problem = problem.clone();
    let source = DataSource::Online {
        sample: Box::new(move |rng, n| {
            let (x, y) = src_problem.sample_pairs(rng, n);
            Ok((x, y.insert_axis(Axis(1))))
        }),
        m: problem.d_x,
        d_y: 1,
    };
    let trained = cinn_train(source, &ccfg)?;
    log::info!(
        "toy: eval NLL {:.4} -> {:.4}",
        trained.curve.initial_eval_nll,
        trained.curve.eval_nll.last().copied().unwrap_or(f64::NAN)
    );
    write_curve(&mut out, &trained.curve)?;
    out.json("cinn_model.json", "cinn_model", &trained.model)?;

    let mut model_stats = Vec::new();
    let mut oracle_stats = Vec::new();
    for (k, &y) in cfg.targets.iter().enumerate() {
        let q = InverseQuery {
            target: vec![y],
            samples: cfg.samples,
            seed: sampling::derive_seed(seed, 100 + k as u64),
        };
        let cands = cinn_invert(&trained.model, &q)?;
        let flat: Vec<f64> = cands.iter().flat_map(|c| c.x.iter().copied()).collect();
        let x = Array2::from_shape_vec((cands.len(), problem.d_x), flat).expect("rows");
        let tag = label(y);
        out.table(
            &format!("samples_y{tag}.csv"),
            "toy_samples",
            &["x1".into(), "x2".into()],
            &x.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        )?;
        let (edges, dens) = histogram2d(&x, problem.half_width(), cfg.hist_bins);
        let (_, w) = out.csv(&format!("hist_y{tag}.csv"), "toy_histogram")?;
        let mut rows = vec![edges.clone(), edges];
        rows.extend(dens);
        super::artifact::write_rows(w, &[], &rows)?;
        model_stats.push(RadiusStats::of(&problem, y, &x));
        if cfg.oracle_samples > 0 {
            let mut r = sampling::rng(sampling::derive_seed(seed, 200 + k as u64));
            let xo = problem.posterior_samples(y, cfg.oracle_samples, &mut r)?;
            oracle_stats.push(RadiusStats::of(&problem, y, &xo));
        }
    }
    let report = ToyReport {
        model: model_stats,
        oracle: oracle_stats,
        initial_eval_nll: trained.curve.initial_eval_nll,
        final_eval_nll: trained.curve.eval_nll.last().copied().unwrap_or(f64::NAN),
        steps: trained.curve.steps,
    };
    out.json("radius_stats.json", "toy_radius_stats", &report)?;
    Ok(report)
}
