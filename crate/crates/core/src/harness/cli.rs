//! `inverseflow` command line. Exit codes: 0 success, 1 usage or
//! configuration error, 2 numeric or validation failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::artifact::{meta_for, read_json, read_numeric_csv, OutDir};
use super::blade::{blade_design, BladeConfig};
use super::inverse::{
    consistency_rows, inverse_consistency, surrogate_pairs, CinnSetup, ReducedSurrogate, ReducedSurrogateDoc,
    ValidationReport,
};
use super::metrics::MetricRow;
use super::{Experiment, ExperimentConfig};
use crate::cinn::{cinn_invert, cinn_train, postprocess, write_candidates_csv, CinnModel, DataSource, InverseQuery};
use crate::error::{Error, Result};
use crate::gp::{HyperPrior, McmcConfig, PredictMode};
use crate::mfgp::{run_adaptive, AdaptiveConfig, Dataset, Fidelity, MfSurrogate, MfgpConfig};
use crate::problems::synth_mf_eval;
use crate::reduce::ProfileCodec;
use crate::sampling;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "inverseflow", version, about = "Probabilistic inverse design toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate or extend a two-fidelity dataset.
    Doe {
        #[command(flatten)]
        common: Common,
        /// Existing dataset CSV to extend with adaptive rounds.
        #[arg(long)]
        extend: Option<PathBuf>,
    },
    /// Fit two-fidelity surrogates to a dataset.
    TrainForward {
        #[command(flatten)]
        common: Common,
    },
    /// Train an inverse model on surrogate draws.
    TrainInverse {
        #[command(flatten)]
        common: Common,
    },
    /// Sample designs for a target.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Inverse model JSON.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated target vector.
        #[arg(long, allow_hyphen_values = true)]
        target: Option<String>,
        /// CSV with one target per row (header row, `#` lines ignored).
        #[arg(long)]
        target_file: Option<PathBuf>,
        /// Samples per target.
        #[arg(long)]
        samples: Option<usize>,
        /// Forward model JSON used to post-process candidates.
        #[arg(long)]
        forward: Option<PathBuf>,
    },
    /// Check inverse consistency against the forward surrogate.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Ring-shaped toy problem.
    Toy {
        #[command(flatten)]
        common: Common,
    },
    /// Two-fidelity cost study.
    MfStudy {
        #[command(flatten)]
        common: Common,
    },
    /// 85-input synthetic blade pipeline.
    BladeLike {
        #[command(flatten)]
        common: Common,
    },
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    crate::par::init_from_env();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Numbers and data failures map to 2; usage, config and I/O to 1.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() || matches!(e, Error::Domain(_)) {
        EXIT_FAILURE
    } else {
        EXIT_USAGE
    }
}

fn load_or_default<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => {
            let f = std::fs::File::open(p)?;
            Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
        }
        None => Ok(T::default()),
    }
}

fn load_required<T: DeserializeOwned>(path: &Option<PathBuf>, what: &str) -> Result<T> {
    let p = path
        .as_ref()
        .ok_or_else(|| Error::config(format!("{what} needs --config <path>")))?;
    let f = std::fs::File::open(p)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

fn out_dir(common: &Common, from_cfg: &Path) -> PathBuf {
    common.out.clone().unwrap_or_else(|| from_cfg.to_path_buf())
}

fn experiment(common: &Common, kind: &str, default: Experiment) -> Result<i32> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig {
            output_dir: PathBuf::from("out").join(kind),
            seed: 0,
            experiment: default,
        },
    };
    if cfg.experiment.name() != kind {
        return Err(Error::config(format!(
            "config describes a '{}' experiment, not '{kind}'",
            cfg.experiment.name()
        )));
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    let outcome = cfg.run()?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(EXIT_OK)
}

fn dispatch(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Toy { common } => experiment(&common, "toy", Experiment::Toy(Default::default())),
        Cmd::MfStudy { common } => experiment(&common, "mf_study", Experiment::MfStudy(Default::default())),
        Cmd::BladeLike { common } => experiment(&common, "blade_like", Experiment::BladeLike(Default::default())),
        Cmd::Doe { common, extend } => doe(&common, extend),
        Cmd::TrainForward { common } => train_forward(&common),
        Cmd::TrainInverse { common } => train_inverse(&common),
        Cmd::Invert {
            common,
            model,
            target,
            target_file,
            samples,
            forward,
        } => invert(&common, model, target, target_file, samples, forward),
        Cmd::Validate { common } => validate(&common),
    }
}

// ---- doe ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthDoe {
    pub n_high: usize,
    pub n_low: usize,
    pub rounds: usize,
    pub budget: Option<f64>,
    pub cost_ratio: f64,
    pub pool_per_dim: usize,
    pub mcmc: McmcConfig,
}

impl Default for SynthDoe {
    fn default() -> Self {
        SynthDoe {
            n_high: 3,
            n_low: 5,
            rounds: 10,
            budget: None,
            cost_ratio: 5.0,
            pool_per_dim: 500,
            mcmc: McmcConfig {
                n_steps: 3000,
                n_burn: 1000,
                n_keep: 30,
                ..McmcConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", content = "params", rename_all = "snake_case")]
pub enum DoeProblem {
    SynthMf(SynthDoe),
    BladeLike(BladeConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoeConfig {
    #[serde(default = "default_doe_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub design: DoeProblem,
}

fn default_doe_dir() -> PathBuf {
    PathBuf::from("out/doe")
}

impl Default for DoeConfig {
    fn default() -> Self {
        DoeConfig {
            output_dir: default_doe_dir(),
            seed: 0,
            design: DoeProblem::SynthMf(SynthDoe::default()),
        }
    }
}

fn doe(common: &Common, extend: Option<PathBuf>) -> Result<i32> {
    let mut cfg: DoeConfig = load_or_default(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.output_dir = out_dir(common, &cfg.output_dir);
    let seed = cfg.seed;
    let mut out = OutDir::create(&cfg.output_dir, meta_for(&cfg, seed, "doe")?)?;
    match &cfg.design {
        DoeProblem::SynthMf(c) => {
            let ds = match &extend {
                Some(p) => Dataset::load_csv(p, c.cost_ratio)?,
                None => {
                    let mut rng = sampling::rng(sampling::derive_seed(seed, 1));
                    let mut ds = Dataset::empty(1, 1, c.cost_ratio);
                    for (n, f) in [(c.n_low, Fidelity::Low), (c.n_high, Fidelity::High)] {
                        for &v in sampling::latin_hypercube(&mut rng, n, 1).column(0) {
                            ds.push(Array1::from(vec![v]).view(), Array1::from(vec![synth_mf_eval(v, f)]).view(), f)?;
                        }
                    }
                    ds
                }
            };
            if ds.d() != 1 || ds.m() != 1 {
                return Err(Error::shape("synthetic pair datasets have one input and one output"));
            }
            let ds = if c.rounds > 0 {
                let mf = MfgpConfig {
                    mcmc: McmcConfig {
                        seed: sampling::derive_seed(seed, 3),
                        ..c.mcmc.clone()
                    },
                    ..MfgpConfig::default()
                };
                let acfg = AdaptiveConfig {
                    rounds: c.rounds,
                    pool_per_dim: c.pool_per_dim,
                    refit_every: 0,
                    seed: sampling::derive_seed(seed, 2),
                    lo: vec![0.0],
                    hi: vec![1.0],
                    budget: c.budget,
                    predict_mode: PredictMode::Mixture,
                };
                run_adaptive(ds, None, &mf, &acfg, |x, f| Ok(vec![synth_mf_eval(x[0], f)]), |_, _, _| Ok(()))?.dataset
            } else {
                ds
            };
            let (_, w) = out.csv("doe.csv", "doe_dataset")?;
            ds.write_csv(w, None)?;
            println!("{} low, {} high rows", ds.count(Fidelity::Low), ds.count(Fidelity::High));
        }
        DoeProblem::BladeLike(c) => {
            let start = match &extend {
                Some(p) => {
                    let codec_path = p.with_file_name("pca_codec.json");
                    let codec: ProfileCodec = read_json(&codec_path)?.data;
                    let mut ds = Dataset::load_csv(p, c.cost_ratio)?;
                    ds.cost_ratio = c.cost_ratio;
                    out.json("pca_codec.json", "pca_codec", &codec)?;
                    Some((codec, ds))
                }
                None => None,
            };
            let (_, ds) = blade_design(c, seed, start, &mut out)?;
            println!("{} low, {} high rows", ds.count(Fidelity::Low), ds.count(Fidelity::High));
        }
    }
    Ok(EXIT_OK)
}

// ---- train-forward ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainForwardConfig {
    pub dataset: PathBuf,
    /// PCA basis for the trailing outputs, if they are coefficients.
    #[serde(default)]
    pub codec: Option<PathBuf>,
    #[serde(default = "default_cost_ratio")]
    pub cost_ratio: f64,
    #[serde(default)]
    pub mcmc: McmcConfig,
    #[serde(default)]
    pub beta_median: Option<f64>,
    #[serde(default)]
    pub predict_mode: PredictMode,
    /// Share of high-fidelity rows held out for the metric table.
    #[serde(default)]
    pub holdout_fraction: f64,
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_cost_ratio() -> f64 {
    crate::mfgp::DEFAULT_COST_RATIO
}

fn train_forward(common: &Common) -> Result<i32> {
    let mut cfg: TrainForwardConfig = load_required(&common.config, "train-forward")?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.output_dir = out_dir(common, &cfg.output_dir);
    let ds = Dataset::load_csv(&cfg.dataset, cfg.cost_ratio)?;
    let codec: Option<ProfileCodec> = match &cfg.codec {
        Some(p) => Some(read_json(p)?.data),
        None => None,
    };
    let k = codec.as_ref().map_or(0, ProfileCodec::n_coefficients);
    if ds.m() < k {
        return Err(Error::shape("dataset has fewer outputs than the basis has coefficients"));
    }
    let mut out = OutDir::create(&cfg.output_dir, meta_for(&cfg, cfg.seed, "train_forward")?)?;
    let d = ds.d();
    let prior = cfg.beta_median.map(|b| HyperPrior::with_beta_median(d, b));
    let mf = MfgpConfig {
        eta_prior: prior.clone(),
        delta_prior: prior,
        mcmc: McmcConfig {
            seed: sampling::derive_seed(cfg.seed, 5),
            ..cfg.mcmc.clone()
        },
    };
    let (fit_ds, test) = if cfg.holdout_fraction > 0.0 {
        let mut high = ds.rows_of(Fidelity::High);
        use rand::seq::SliceRandom;
        high.shuffle(&mut sampling::rng(sampling::derive_seed(cfg.seed, 4)));
        let n_hold = ((high.len() as f64 * cfg.holdout_fraction).ceil() as usize).max(2);
        if high.len() < n_hold + 2 {
            return Err(Error::config("too few high-fidelity rows for a hold-out split"));
        }
        let mut held = high[..n_hold].to_vec();
        held.sort_unstable();
        let train: Vec<usize> = (0..ds.n_rows()).filter(|i| !held.contains(i)).collect();
        (ds.select_rows(&train), Some(ds.select_rows(&held)))
    } else {
        (ds.clone(), None)
    };
    let sur = MfSurrogate::fit(&fit_ds, &mf)?;
    if let Some(test) = test {
        let (pred, _) = sur.predict_rows(test.x.view(), cfg.predict_mode)?;
        let rows = (0..sur.n_outputs())
            .map(|j| MetricRow::compute(&ds.y_names[j], &pred.column(j).to_vec(), &test.y.column(j).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        out.json("forward_metrics.json", "forward_metrics", &rows)?;
    }
    let n_direct = ds.m() - k;
    let forward = ReducedSurrogate::new(sur, codec, n_direct, cfg.predict_mode)?;
    out.json("forward_model.json", "forward_model", &forward.to_doc())?;
    Ok(EXIT_OK)
}

fn load_forward(path: &Path) -> Result<ReducedSurrogate> {
    ReducedSurrogate::from_doc(read_json::<ReducedSurrogateDoc>(path)?.data)
}

fn load_cinn(path: &Path) -> Result<CinnModel> {
    Ok(read_json::<CinnModel>(path)?.data)
}

// ---- train-inverse ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainInverseConfig {
    pub forward: PathBuf,
    #[serde(default = "default_pairs")]
    pub n_pairs: usize,
    /// Input box of the pair draws; the unit box when empty.
    #[serde(default)]
    pub lo: Vec<f64>,
    #[serde(default)]
    pub hi: Vec<f64>,
    #[serde(default)]
    pub pair_noise: bool,
    #[serde(default)]
    pub cinn: CinnSetup,
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_pairs() -> usize {
    10_000
}

fn bounds(lo: &[f64], hi: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if lo.is_empty() && hi.is_empty() {
        return Ok((vec![0.0; d], vec![1.0; d]));
    }
    if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| a >= b) {
        return Err(Error::config("lo/hi must have one strictly ordered pair per input"));
    }
    Ok((lo.to_vec(), hi.to_vec()))
}

fn train_inverse(common: &Common) -> Result<i32> {
    let mut cfg: TrainInverseConfig = load_required(&common.config, "train-inverse")?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.output_dir = out_dir(common, &cfg.output_dir);
    let forward = load_forward(&cfg.forward)?;
    let d = crate::cinn::ForwardModel::input_dim(&forward);
    let (lo, hi) = bounds(&cfg.lo, &cfg.hi, d)?;
    let mut out = OutDir::create(&cfg.output_dir, meta_for(&cfg, cfg.seed, "train_inverse")?)?;
    let (x, y) = surrogate_pairs(&forward, cfg.n_pairs, &lo, &hi, cfg.pair_noise, sampling::derive_seed(cfg.seed, 6))?;
    let t = cinn_train(
        DataSource::Fixed {
            x: x.view(),
            y: y.view(),
        },
        &cfg.cinn.config(cfg.seed, cfg.n_pairs),
    )?;
    let rows: Vec<Vec<f64>> = (0..t.curve.epoch_nll.len())
        .map(|e| vec![(e + 1) as f64, t.curve.epoch_nll[e], t.curve.eval_nll[e], t.curve.lr[e]])
        .collect();
    out.table(
        "training_curve.csv",
        "training_curve",
        &["epoch", "train_nll", "eval_nll", "lr"].map(String::from),
        &rows,
    )?;
    out.json("cinn_model.json", "cinn_model", &t.model)?;
    Ok(EXIT_OK)
}

// ---- invert ----

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvertConfig {
    pub model: Option<PathBuf>,
    pub forward: Option<PathBuf>,
    pub target: Option<Vec<f64>>,
    pub target_file: Option<PathBuf>,
    pub samples: Option<usize>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn parse_target(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad target entry '{t}'")))
        })
        .collect()
}

fn invert(
    common: &Common,
    model: Option<PathBuf>,
    target: Option<String>,
    target_file: Option<PathBuf>,
    samples: Option<usize>,
    forward: Option<PathBuf>,
) -> Result<i32> {
    let mut cfg: InvertConfig = load_or_default(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.output_dir = out_dir(common, &cfg.output_dir);
    cfg.model = model.or(cfg.model);
    cfg.forward = forward.or(cfg.forward);
    cfg.samples = samples.or(cfg.samples);
    if let Some(t) = target {
        cfg.target = Some(parse_target(&t)?);
    }
    cfg.target_file = target_file.or(cfg.target_file);
    let s = cfg.samples.unwrap_or(1000);
    if s == 0 {
        return Err(Error::config("--samples must be at least 1"));
    }
    let model_path = cfg.model.clone().ok_or_else(|| Error::config("invert needs --model"))?;
    let targets: Vec<Vec<f64>> = match (&cfg.target, &cfg.target_file) {
        (Some(t), None) => vec![t.clone()],
        (None, Some(p)) => read_numeric_csv(p)?.1,
        _ => return Err(Error::config("give exactly one of --target or --target-file")),
    };
    let model = load_cinn(&model_path)?;
    let fwd = match &cfg.forward {
        Some(p) => Some(load_forward(p)?),
        None => None,
    };
    let mut out = OutDir::create(&cfg.output_dir, meta_for(&cfg, cfg.seed, "invert")?)?;
    for (i, t) in targets.iter().enumerate() {
        let q = InverseQuery {
            target: t.clone(),
            samples: s,
            seed: sampling::derive_seed(cfg.seed, i as u64),
        };
        let mut cands = cinn_invert(&model, &q)?;
        if let Some(f) = &fwd {
            cands = postprocess(cands, f)?;
        }
        let (_, w) = out.csv(&format!("candidates_{i}.csv"), "design_candidates")?;
        write_candidates_csv(w, &cands, None)?;
    }
    Ok(EXIT_OK)
}

// ---- validate ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub model: PathBuf,
    pub forward: PathBuf,
    #[serde(default = "default_targets")]
    pub n_targets: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Forward-output columns scored; the direct outputs when empty.
    #[serde(default)]
    pub objectives: Vec<usize>,
    #[serde(default)]
    pub objective_names: Vec<String>,
    #[serde(default)]
    pub lo: Vec<f64>,
    #[serde(default)]
    pub hi: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub r2_threshold: f64,
    #[serde(default)]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_targets() -> usize {
    100
}

fn default_samples() -> usize {
    1000
}

fn default_threshold() -> f64 {
    0.9
}

fn validate(common: &Common) -> Result<i32> {
    let mut cfg: ValidateConfig = load_required(&common.config, "validate")?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.output_dir = out_dir(common, &cfg.output_dir);
    let model = load_cinn(&cfg.model)?;
    let forward = load_forward(&cfg.forward)?;
    let d = crate::cinn::ForwardModel::input_dim(&forward);
    let (lo, hi) = bounds(&cfg.lo, &cfg.hi, d)?;
    let objectives: Vec<usize> = if cfg.objectives.is_empty() {
        (0..forward.n_direct).collect()
    } else {
        cfg.objectives.clone()
    };
    let names: Vec<String> = if cfg.objective_names.len() == objectives.len() {
        cfg.objective_names.clone()
    } else {
        objectives.iter().map(|j| format!("output{}", j + 1)).collect()
    };
    let mut out = OutDir::create(&cfg.output_dir, meta_for(&cfg, cfg.seed, "validate")?)?;
    let (_, targets) = surrogate_pairs(&forward, cfg.n_targets, &lo, &hi, false, sampling::derive_seed(cfg.seed, 7))?;
    let per = inverse_consistency(
        &model,
        &forward,
        targets.view(),
        &objectives,
        cfg.samples,
        sampling::derive_seed(cfg.seed, 8),
        |_, _| Ok(()),
    )?;
    let rows = consistency_rows(&names, &per)?;
    let report = ValidationReport::new(vec![], rows, per, cfg.r2_threshold);
    out.json("validation_report.json", "validation_report", &report)?;
    for r in &report.inverse {
        println!("{}: R2 {:.4} nRMSE {:.4}", r.name, r.r2, r.nrmse);
    }
    if report.passed {
        Ok(EXIT_OK)
    } else {
        eprintln!("validation failed: R2 below {}", cfg.r2_threshold);
        Ok(EXIT_FAILURE)
    }
}
