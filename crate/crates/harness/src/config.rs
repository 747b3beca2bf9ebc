//! Campaign configuration.
//!
//! A campaign is described by one TOML file. Every key is optional and the
//! defaults reproduce the reference setup: one-dimensional contexts and
//! actions, 25 warmup duels, 500 total duels, ten seeds. The metadata file
//! written next to the results embeds the full configuration, so it is
//! accepted wherever a configuration file is.

use std::path::{Path, PathBuf};

use borda_core::{
    BetaSchedule, LinkFunction, NormStudyConfig, PosteriorConfig, RewardSampler, RoundConfig, SelectionArm, Strategy, ToyPolicyConfig,
    ToyReward,
};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::output::Metadata;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    NormStudy,
    ToyDpo,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::NormStudy => "norm-study",
            ExperimentKind::ToyDpo => "toy-dpo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormCell {
    pub context_dim: usize,
    pub action_dim: usize,
    /// Overrides the study-wide function count for this cell.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_functions: Option<usize>,
}

impl NormCell {
    pub const fn new(context_dim: usize, action_dim: usize) -> Self {
        Self {
            context_dim,
            action_dim,
            num_functions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormStudySection {
    pub cells: Vec<NormCell>,
    pub study: NormStudyConfig,
}

impl Default for NormStudySection {
    fn default() -> Self {
        let mut cells = vec![
            NormCell::new(0, 1),
            NormCell::new(1, 1),
            NormCell::new(1, 3),
            NormCell::new(3, 1),
            NormCell::new(3, 3),
            NormCell::new(10, 10),
        ];
        cells[5].num_functions = Some(200);
        Self {
            cells,
            study: NormStudyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDpoSection {
    pub policy: ToyPolicyConfig,
    /// Round settings shared by all arms; `arm` is replaced per arm.
    pub round: RoundConfig,
    pub arms: Vec<SelectionArm>,
    pub rounds: usize,
    /// Unlabeled prompts drawn per round.
    pub pool_size: usize,
    pub prompt_len: usize,
    /// Fixed prompts on which greedy decodes are compared to the reference.
    pub eval_prompts: usize,
    pub reward: ToyReward,
    pub link: LinkFunction,
}

impl Default for ToyDpoSection {
    fn default() -> Self {
        Self {
            policy: ToyPolicyConfig::default(),
            round: RoundConfig {
                learning_rate: 2.0,
                ..RoundConfig::default()
            },
            arms: SelectionArm::ALL.to_vec(),
            rounds: 30,
            pool_size: 32,
            prompt_len: 3,
            eval_prompts: 64,
            reward: ToyReward::TokenValues {
                values: vec![0.0, 1.0, -0.5, 0.5, -1.0, 0.25, 0.75, -0.25],
            },
            link: LinkFunction::logistic(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub context_dim: usize,
    pub action_dim: usize,
    pub posterior: PosteriorConfig,
    pub reward: RewardSampler,
    pub link: LinkFunction,
    /// Uniform duels before the first strategy step (`n₀`).
    pub warmup: usize,
    /// Total duels per trial, warmup included (`T`).
    pub horizon: usize,
    pub context_resolution: usize,
    pub action_resolution: usize,
    pub strategies: Vec<Strategy>,
    pub beta: BetaSchedule,
    pub snapshot_every: usize,
    /// Steps between policy evaluations.
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    /// Added to every seed.
    pub seed_offset: u64,
    /// Worker threads; 0 picks the number of cores. Never affects results.
    pub workers: usize,
    pub out: PathBuf,
    pub norm_study: NormStudySection,
    pub toy_dpo: ToyDpoSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::Simulate,
            context_dim: 1,
            action_dim: 1,
            posterior: PosteriorConfig::default(),
            reward: RewardSampler::default(),
            link: LinkFunction::logistic(),
            warmup: 25,
            horizon: 500,
            context_resolution: 101,
            action_resolution: 101,
            strategies: Strategy::ALL.to_vec(),
            beta: BetaSchedule::default(),
            snapshot_every: borda_core::bandit::DEFAULT_SNAPSHOT_EVERY,
            eval_every: 25,
            seeds: (0..10).collect(),
            seed_offset: 0,
            workers: 0,
            out: PathBuf::from("results"),
            norm_study: NormStudySection::default(),
            toy_dpo: ToyDpoSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_experiment(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::config(e.to_string()))
    }

    /// Read a TOML configuration, or the configuration embedded in a
    /// `.json` metadata file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let meta: Metadata = serde_json::from_str(&text).map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))?;
            return Ok(meta.config);
        }
        Self::from_toml_str(&text).map_err(|e| HarnessError::config(format!("{}: {e}", path.display())))
    }

    /// Seeds with the offset applied.
    pub fn effective_seeds(&self) -> Vec<u64> {
        self.seeds.iter().map(|s| s.wrapping_add(self.seed_offset)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::config("at least one seed is required"));
        }
        let core = |e: borda_core::Error| HarnessError::config(e.to_string());
        match self.experiment {
            ExperimentKind::Simulate => {
                if self.horizon < self.warmup {
                    return Err(HarnessError::config(format!("horizon {} is below warmup {}", self.horizon, self.warmup)));
                }
                if self.action_dim == 0 {
                    return Err(HarnessError::config("action_dim must be at least 1"));
                }
                if self.context_resolution == 0 || self.action_resolution == 0 {
                    return Err(HarnessError::config("grid resolutions must be positive"));
                }
                if self.strategies.is_empty() {
                    return Err(HarnessError::config("at least one strategy is required"));
                }
                if self.eval_every == 0 || self.snapshot_every == 0 {
                    return Err(HarnessError::config("eval_every and snapshot_every must be positive"));
                }
                self.posterior.validate().map_err(core)?;
                self.reward.validate().map_err(core)?;
                self.link.validate().map_err(core)?;
                self.beta.validate().map_err(core)?;
            }
            ExperimentKind::NormStudy => {
                let s = &self.norm_study;
                if s.cells.is_empty() {
                    return Err(HarnessError::config("norm study needs at least one cell"));
                }
                if s.cells.iter().any(|c| c.action_dim == 0 || c.num_functions == Some(0)) {
                    return Err(HarnessError::config("norm study cells need an action dimension and a positive function count"));
                }
                s.study.validate().map_err(core)?;
            }
            ExperimentKind::ToyDpo => {
                let s = &self.toy_dpo;
                s.policy.validate().map_err(core)?;
                s.round.validate().map_err(core)?;
                s.link.validate().map_err(core)?;
                if s.arms.is_empty() {
                    return Err(HarnessError::config("at least one arm is required"));
                }
                if s.pool_size < s.round.batch_size {
                    return Err(HarnessError::config("pool_size must be at least the batch size"));
                }
                if s.prompt_len == 0 || s.eval_prompts == 0 {
                    return Err(HarnessError::config("prompt_len and eval_prompts must be positive"));
                }
                if let ToyReward::TokenValues { values } = &s.reward {
                    if values.len() != s.policy.vocab_size {
                        return Err(HarnessError::config("token values must cover the vocabulary"));
                    }
                }
            }
        }
        Ok(())
    }
}
