//! Metrics, experiment drivers, artifacts and the command-line front end.

mod artifact;
mod blade;
pub mod cli;
mod inverse;
mod metrics;
mod mf_study;
mod toy;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use artifact::{
    config_hash, meta_for, read_csv_meta, read_json, read_numeric_csv, write_json, write_rows, Artifact, Meta, OutDir,
};
pub use blade::{run_blade_like, smoke_config as blade_smoke_config, BladeConfig, BladeReport, OBJECTIVE_NAMES};
pub use inverse::{
    consistency_rows, inverse_consistency, surrogate_pairs, CinnSetup, ReducedSurrogate, ReducedSurrogateDoc,
    TargetConsistency, ValidationReport,
};
pub use metrics::{mean_std, median, nrmse, quantile, r_squared, MetricRow};
pub use mf_study::{run_mf_study, MfStudyConfig, MfStudyReport, SeedResult};
pub use toy::{histogram2d, run_toy, RadiusStats, ToyConfig, ToyReport};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum Experiment {
    Toy(ToyConfig),
    MfStudy(MfStudyConfig),
    BladeLike(BladeConfig),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Toy(_) => "toy",
            Experiment::MfStudy(_) => "mf_study",
            Experiment::BladeLike(_) => "blade_like",
        }
    }
}

/// A complete, serializable description of one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentOutcome {
    Toy(ToyReport),
    MfStudy(MfStudyReport),
    BladeLike(Box<BladeReport>),
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    pub fn run(&self) -> Result<ExperimentOutcome> {
        let dir = &self.output_dir;
        Ok(match &self.experiment {
            Experiment::Toy(c) => ExperimentOutcome::Toy(run_toy(c, self.seed, dir)?),
            Experiment::MfStudy(c) => ExperimentOutcome::MfStudy(run_mf_study(c, self.seed, dir)?),
            Experiment::BladeLike(c) => ExperimentOutcome::BladeLike(Box::new(run_blade_like(c, self.seed, dir)?)),
        })
    }
}
