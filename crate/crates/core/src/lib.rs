//! Active exploration for contextual dueling bandits.
//!
//! Rewards are summarized by their contextual Borda function, which is
//! regressed directly from binary duel outcomes with kernel ridge
//! regression. Confidence bounds on that regression drive context and
//! action selection, and a generalized Borda rule scores prompts and
//! completions for preference optimization of token policies.

pub mod acquisition;
pub mod bandit;
pub mod env;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod norm_study;
pub mod policy;
pub mod posterior;
pub mod qmc;

pub use acquisition::{acquisition_alpha, active_dpo_round, generalized_borda_bounds, reward_alpha, select_batch, AcquisitionScore, GeneralizedBordaEstimate, PreferenceOracle, ReplayOracle, RoundConfig, SelectionArm, SyntheticOracle, ToyReward};
pub use bandit::{warmup, ArchiveEntry, BetaMode, BetaSchedule, ContextChoice, GridPolicy, Grids, StepRecord, Strategy, StrategyState};
pub use env::{borda_oracle, duel, BordaQuadrature, Environment, LinkFamily, LinkFunction, Suboptimality};
pub use error::{Error, NumericalDiagnostics, Result};
pub use kernels::{eval_kernel, eval_reward, KernelFamily, KernelSpec, RewardSampler, RffBasis};
pub use norm_study::{estimate_rkhs_norm, run_norm_study, FunctionNorms, NormStudyConfig, NormStudyResult, RkhsNormEstimator};
pub use policy::{dpo_gradient, dpo_loss, dpo_step, greedy_decode, sample_completion, sequence_bounds, token_stats, DpoExample, PolicyEnsemble, Role, SequenceBounds, Token, TokenSequence, TokenStats, ToyPolicy, ToyPolicyConfig};
pub use posterior::{GridPosterior, PosteriorConfig, PosteriorModel, Prediction, PreferenceObservation};
