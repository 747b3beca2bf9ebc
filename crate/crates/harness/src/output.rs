//! Result tables and campaign metadata.
//!
//! Tables are comma-separated with a fixed header row. Column names and
//! order are part of the file format; new columns go at the end.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use borda_core::{SelectionArm, Strategy};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{HarnessError, Result};

pub const TRIALS_FILE: &str = "trials.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const NORM_STUDY_FILE: &str = "norm_study.csv";
pub const NORM_FUNCTIONS_FILE: &str = "norm_functions.csv";
pub const TOY_DPO_FILE: &str = "toy_dpo.csv";
pub const TOY_DPO_SUMMARY_FILE: &str = "toy_dpo_summary.csv";
pub const METADATA_FILE: &str = "metadata.json";

/// One policy evaluation within a bandit trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub strategy: Strategy,
    /// Duels seen so far, warmup included.
    pub step: usize,
    pub max_suboptimality: f64,
    pub median_suboptimality: f64,
    /// Acquisition value of the most recent selection; empty at the end of
    /// warmup.
    pub acquisition: Option<f64>,
}

impl TrialRecord {
    pub const HEADER: [&'static str; 6] = ["seed", "strategy", "step", "max_suboptimality", "median_suboptimality", "acquisition"];
}

/// Mean wall time per step since the previous evaluation. Kept apart from
/// the trial table so that table is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub seed: u64,
    pub strategy: Strategy,
    pub step: usize,
    pub wall_time_per_step_ms: f64,
}

impl TimingRecord {
    pub const HEADER: [&'static str; 4] = ["seed", "strategy", "step", "wall_time_per_step_ms"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub strategy: Strategy,
    /// False when the trial stopped on a numerical failure.
    pub completed: bool,
    pub steps: usize,
    /// Sum of the posterior variance at each strategy query.
    pub variance_sum: f64,
    /// `2 Φ̂ / log(1 + η⁻²)` for the trial's information-gain estimate.
    pub variance_bound: f64,
    pub information_gain: f64,
    pub error: Option<String>,
}

impl TrialSummary {
    pub const HEADER: [&'static str; 8] = [
        "seed",
        "strategy",
        "completed",
        "steps",
        "variance_sum",
        "variance_bound",
        "information_gain",
        "error",
    ];
}

/// Long-format row for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub metric: String,
    pub strategy: String,
    pub seed: u64,
    pub value: f64,
}

impl CurvePoint {
    pub const HEADER: [&'static str; 5] = ["step", "metric", "strategy", "seed", "value"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStudyRow {
    pub context_dim: usize,
    pub action_dim: usize,
    pub num_functions: usize,
    pub wins: usize,
    pub ties: usize,
    pub win_rate: f64,
    pub win_margin: f64,
}

impl NormStudyRow {
    pub const HEADER: [&'static str; 7] = ["context_dim", "action_dim", "num_functions", "wins", "ties", "win_rate", "win_margin"];
}

impl From<&borda_core::NormStudyResult> for NormStudyRow {
    fn from(r: &borda_core::NormStudyResult) -> Self {
        Self {
            context_dim: r.context_dim,
            action_dim: r.action_dim,
            num_functions: r.num_functions,
            wins: r.wins,
            ties: r.ties,
            win_rate: r.win_rate,
            win_margin: r.win_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormFunctionRow {
    pub context_dim: usize,
    pub action_dim: usize,
    pub index: usize,
    pub reward_seed: u64,
    pub reward_norm: f64,
    pub borda_norm: f64,
}

impl NormFunctionRow {
    pub const HEADER: [&'static str; 6] = ["context_dim", "action_dim", "index", "reward_seed", "reward_norm", "borda_norm"];

    pub fn norms(&self) -> borda_core::FunctionNorms {
        borda_core::FunctionNorms {
            index: self.index,
            reward_seed: self.reward_seed,
            reward_norm: self.reward_norm,
            borda_norm: self.borda_norm,
        }
    }
}

/// One toy preference-optimization round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDpoRecord {
    pub seed: u64,
    pub arm: SelectionArm,
    /// Updates applied before the evaluation; round 0 is the initial policy.
    pub round: usize,
    /// Expected oracle preference of greedy decodes over the reference's.
    pub win_rate: f64,
    pub mean_completion_len: f64,
    /// Mean acquisition value of the labeled prompts; empty at round 0.
    pub mean_alpha: Option<f64>,
}

impl ToyDpoRecord {
    pub const HEADER: [&'static str; 6] = ["seed", "arm", "round", "win_rate", "mean_completion_len", "mean_alpha"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDpoSummary {
    pub arm: SelectionArm,
    pub round: usize,
    pub num_seeds: usize,
    pub mean_win_rate: f64,
    pub standard_error: f64,
}

impl ToyDpoSummary {
    pub const HEADER: [&'static str; 5] = ["arm", "round", "num_seeds", "mean_win_rate", "standard_error"];
}

/// Written next to every table set; enough to rerun the campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub experiment: ExperimentKind,
    pub library: String,
    pub library_version: String,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
}

impl Metadata {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            experiment: config.experiment,
            library: env!("CARGO_PKG_NAME").to_string(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: config.effective_seeds(),
            config: config.clone(),
        }
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

/// Header row, then one row per record. An empty slice gives a header-only
/// table.
pub fn write_table<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let table_err = |source| HarnessError::Table {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
    w.write_record(header).map_err(table_err)?;
    for row in rows {
        w.serialize(row).map_err(table_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let table_err = |source| HarnessError::Table {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(table_err)?;
    r.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(table_err)
}

pub fn write_metadata(path: &Path, meta: &Metadata) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

pub fn read_metadata(path: &Path) -> Result<Metadata> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Long-format suboptimality curves from trial records.
pub fn curves(records: &[TrialRecord]) -> Vec<CurvePoint> {
    let mut out = Vec::with_capacity(2 * records.len());
    for r in records {
        for (metric, value) in [("max_suboptimality", r.max_suboptimality), ("median_suboptimality", r.median_suboptimality)] {
            out.push(CurvePoint {
                step: r.step,
                metric: metric.to_string(),
                strategy: r.strategy.name().to_string(),
                seed: r.seed,
                value,
            });
        }
    }
    out
}

/// Write the trial table and its derived curves into `dir`.
pub fn emit_outputs(records: &[TrialRecord], dir: &Path) -> Result<()> {
    ensure_dir(dir)?;
    write_table(&dir.join(TRIALS_FILE), &TrialRecord::HEADER, records)?;
    write_table(&dir.join(CURVES_FILE), &CurvePoint::HEADER, &curves(records))
}
