//! Active exploration over contexts for the kernelized dueling bandit.
//!
//! Three strategies share one posterior over the Borda function and differ
//! only in how they pick what to query:
//!
//! * `ae-borda` picks the context whose optimistic and pessimistic values
//!   disagree most, then the optimistic action there;
//! * `ucb-borda` picks a uniform context and the optimistic action;
//! * `uniform-borda` picks both uniformly.
//!
//! All of them are evaluated through the same pessimistic policy: for each
//! context, the action maximizing the running max over rounds of the lower
//! confidence bound.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{duel, Environment};
use crate::error::{check_dim, Error, Result};
use crate::posterior::{argmax_first, information_gain_curve, GridPosterior, PosteriorModel, PreferenceObservation, INFO_GAIN_GRID};
use crate::qmc::uniform_grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    AeBorda,
    UcbBorda,
    UniformBorda,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::AeBorda, Strategy::UcbBorda, Strategy::UniformBorda];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::AeBorda => "ae-borda",
            Strategy::UcbBorda => "ucb-borda",
            Strategy::UniformBorda => "uniform-borda",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaMode {
    Theoretical,
    Fixed,
}

/// Confidence width schedule.
///
/// In theoretical mode `β = 2B + √(2Φ̂ + 1 + log(2/δ))`, where `Φ̂` is the
/// information gain of the data already observed; in fixed mode `β` is
/// constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaSchedule {
    pub mode: BetaMode,
    /// Bound `B` on the RKHS norm of the Borda function.
    pub norm_bound: f64,
    pub delta: f64,
    pub fixed_value: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            mode: BetaMode::Fixed,
            norm_bound: 1.0,
            delta: 0.05,
            fixed_value: 2.0,
        }
    }
}

impl BetaSchedule {
    pub fn fixed(value: f64) -> Self {
        Self {
            mode: BetaMode::Fixed,
            fixed_value: value,
            ..Self::default()
        }
    }

    pub fn theoretical(norm_bound: f64, delta: f64) -> Self {
        Self {
            mode: BetaMode::Theoretical,
            norm_bound,
            delta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            BetaMode::Theoretical => {
                if !(self.norm_bound > 0.0 && self.norm_bound.is_finite()) {
                    return Err(Error::invalid("norm bound B must be positive"));
                }
                if !(self.delta > 0.0 && self.delta < 1.0) {
                    return Err(Error::invalid("delta must lie in (0, 1)"));
                }
            }
            // Zero is allowed: it degenerates to greedy selection.
            BetaMode::Fixed => {
                if !(self.fixed_value >= 0.0 && self.fixed_value.is_finite()) {
                    return Err(Error::invalid("fixed beta must be non-negative"));
                }
            }
        }
        Ok(())
    }

    /// `β` given the information gain `Φ̂` of the current data.
    pub fn beta(&self, info_gain: f64) -> f64 {
        match self.mode {
            BetaMode::Fixed => self.fixed_value,
            BetaMode::Theoretical => {
                2.0 * self.norm_bound + (2.0 * info_gain + 1.0 + (2.0 / self.delta).ln()).sqrt()
            }
        }
    }
}

/// Finite context and action grids on which all argmax operations run.
#[derive(Debug, Clone, PartialEq)]
pub struct Grids {
    contexts: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

impl Grids {
    pub fn new(contexts: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Result<Self> {
        if contexts.is_empty() || actions.is_empty() {
            return Err(Error::invalid("context and action grids must be non-empty"));
        }
        for c in &contexts[1..] {
            check_dim(contexts[0].len(), c.len())?;
        }
        for a in &actions[1..] {
            check_dim(actions[0].len(), a.len())?;
        }
        Ok(Self { contexts, actions })
    }

    /// Tensor grids with the given per-axis resolutions.
    pub fn uniform(context_dim: usize, action_dim: usize, context_resolution: usize, action_resolution: usize) -> Result<Self> {
        Self::new(
            uniform_grid(context_resolution, context_dim),
            uniform_grid(action_resolution, action_dim),
        )
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn context_dim(&self) -> usize {
        self.contexts[0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].len()
    }

    /// Joint `(x, a)` points, row-major by context.
    pub fn joint_points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.num_contexts() * self.num_actions());
        for x in &self.contexts {
            for a in &self.actions {
                let mut z = x.clone();
                z.extend_from_slice(a);
                out.push(z);
            }
        }
        out
    }
}

/// Archive entries between lower-bound snapshots.
pub const DEFAULT_SNAPSHOT_EVERY: usize = 10;

/// One archived round: the posterior on the first `observations` data
/// points together with the `β` it is paired with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub observations: usize,
    pub beta: f64,
    /// Whether this entry contributes to the running lower-bound maximum.
    pub snapshot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextChoice {
    pub index: usize,
    /// `max_a ucb(x, a) − max_a lcb(x, a)` at the chosen context.
    pub acquisition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: PreferenceObservation,
    pub context_index: usize,
    pub action_index: usize,
    pub comparator_index: usize,
    pub acquisition: f64,
    pub beta: f64,
    /// `σ²` at the queried point before the update.
    pub query_variance: f64,
}

/// Pessimistic grid policy: action index per context index.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPolicy {
    pub actions: Vec<usize>,
    /// Archived lower bound of the chosen action.
    pub values: Vec<f64>,
}

/// Per-strategy state: posterior, confidence schedule, and the archive of
/// rounds feeding the pessimistic policy.
#[derive(Debug, Clone)]
pub struct StrategyState {
    strategy: Strategy,
    posterior: PosteriorModel,
    schedule: BetaSchedule,
    info_gain: Option<Arc<Vec<f64>>>,
    grids: Arc<Grids>,
    cache: GridPosterior,
    archive: Vec<ArchiveEntry>,
    /// Running max of lcb over snapshot entries, per joint grid point.
    best_lcb: Vec<f64>,
    snapshot_every: usize,
}

impl StrategyState {
    pub fn new(strategy: Strategy, posterior: PosteriorModel, schedule: BetaSchedule, grids: Arc<Grids>) -> Result<Self> {
        schedule.validate()?;
        check_dim(posterior.context_dim(), grids.context_dim())?;
        check_dim(posterior.action_dim(), grids.action_dim())?;
        let cache = GridPosterior::new(&posterior, grids.joint_points())?;
        let best_lcb = vec![f64::NEG_INFINITY; cache.len()];
        let mut state = Self {
            strategy,
            posterior,
            schedule,
            info_gain: None,
            grids,
            cache,
            archive: Vec::new(),
            best_lcb,
            snapshot_every: DEFAULT_SNAPSHOT_EVERY,
        };
        state.ensure_info_gain(state.posterior.len() + 1)?;
        Ok(state)
    }

    /// Reuse a precomputed `Φ̂_t` curve (entry `t` for `t` observations).
    pub fn with_info_gain(mut self, curve: Arc<Vec<f64>>) -> Self {
        self.info_gain = Some(curve);
        self
    }

    /// Only every `k`-th archive entry joins the running lower-bound max;
    /// the latest entry is always considered at extraction time.
    pub fn with_snapshot_every(mut self, k: usize) -> Self {
        self.snapshot_every = k.max(1);
        self
    }

    fn ensure_info_gain(&mut self, n: usize) -> Result<()> {
        if self.schedule.mode != BetaMode::Theoretical {
            return Ok(());
        }
        let have = self.info_gain.as_ref().map_or(0, |c| c.len());
        if have > n {
            return Ok(());
        }
        let t_max = (n + 1).max(2 * have).max(64);
        let curve = information_gain_curve(
            self.posterior.kernel(),
            self.posterior.config().noise_scale,
            self.posterior.joint_dim(),
            INFO_GAIN_GRID,
            t_max,
        )?;
        self.info_gain = Some(Arc::new(curve));
        Ok(())
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn posterior(&self) -> &PosteriorModel {
        &self.posterior
    }

    pub fn schedule(&self) -> &BetaSchedule {
        &self.schedule
    }

    pub fn grids(&self) -> &Grids {
        &self.grids
    }

    pub fn archive(&self) -> &[ArchiveEntry] {
        &self.archive
    }

    /// `β` paired with the posterior on the first `n` observations.
    pub fn beta_for(&self, n: usize) -> f64 {
        let phi = match &self.info_gain {
            Some(curve) => curve[n.min(curve.len() - 1)],
            None => 0.0,
        };
        self.schedule.beta(phi)
    }

    /// `β` for the next query.
    pub fn beta(&self) -> f64 {
        self.beta_for(self.posterior.len())
    }

    fn joint(&self, context: usize, action: usize) -> usize {
        context * self.grids.num_actions() + action
    }

    pub fn mean(&self, context: usize, action: usize) -> f64 {
        self.cache.mean(self.joint(context, action))
    }

    pub fn stddev(&self, context: usize, action: usize) -> f64 {
        self.cache.stddev(self.joint(context, action))
    }

    pub fn ucb(&self, context: usize, action: usize) -> f64 {
        let g = self.joint(context, action);
        self.cache.mean(g) + self.beta() * self.cache.stddev(g)
    }

    pub fn lcb(&self, context: usize, action: usize) -> f64 {
        let g = self.joint(context, action);
        self.cache.mean(g) - self.beta() * self.cache.stddev(g)
    }

    /// `max_a ucb(x, a) − max_a lcb(x, a)` at every grid context.
    pub fn acquisition_values(&self) -> Vec<f64> {
        (0..self.grids.num_contexts()).map(|c| self.acquisition_at(c)).collect()
    }

    fn acquisition_at(&self, context: usize) -> f64 {
        let beta = self.beta();
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for a in 0..self.grids.num_actions() {
            let g = self.joint(context, a);
            let (m, s) = (self.cache.mean(g), self.cache.stddev(g));
            hi = hi.max(m + beta * s);
            lo = lo.max(m - beta * s);
        }
        hi - lo
    }

    pub fn select_context<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextChoice {
        match self.strategy {
            Strategy::AeBorda => {
                let values = self.acquisition_values();
                let index = argmax_first(&values);
                ContextChoice {
                    index,
                    acquisition: values[index],
                }
            }
            Strategy::UcbBorda | Strategy::UniformBorda => {
                let index = rng.random_range(0..self.grids.num_contexts());
                ContextChoice {
                    index,
                    acquisition: self.acquisition_at(index),
                }
            }
        }
    }

    /// Action and comparator indices for the given context index.
    pub fn select_action<R: Rng + ?Sized>(&self, context: usize, rng: &mut R) -> (usize, usize) {
        let na = self.grids.num_actions();
        let action = match self.strategy {
            Strategy::AeBorda | Strategy::UcbBorda => {
                let ucb: Vec<f64> = (0..na).map(|a| self.ucb(context, a)).collect();
                argmax_first(&ucb)
            }
            Strategy::UniformBorda => rng.random_range(0..na),
        };
        let comparator = rng.random_range(0..na);
        (action, comparator)
    }

    /// Add an observation without archiving. Returns the pre-update
    /// variance at the observed point.
    pub fn observe(&mut self, obs: &PreferenceObservation) -> Result<f64> {
        let var = self.posterior.push(obs)?;
        self.cache.sync(&self.posterior);
        self.ensure_info_gain(self.posterior.len() + 1)?;
        Ok(var)
    }

    /// Archive the current posterior with its `β`.
    pub fn archive_snapshot(&mut self) {
        let n = self.posterior.len();
        let beta = self.beta_for(n);
        let snapshot = self.archive.len() % self.snapshot_every == 0;
        if snapshot {
            for (g, best) in self.best_lcb.iter_mut().enumerate() {
                let lcb = self.cache.mean(g) - beta * self.cache.stddev(g);
                if lcb > *best {
                    *best = lcb;
                }
            }
        }
        self.archive.push(ArchiveEntry {
            observations: n,
            beta,
            snapshot,
        });
    }

    /// One round: choose a context, an action and a comparator, duel,
    /// update the posterior, and archive the new posterior.
    pub fn step<R: Rng + ?Sized>(&mut self, env: &Environment, rng: &mut R) -> Result<StepRecord> {
        let beta = self.beta();
        let choice = self.select_context(rng);
        let (action_index, comparator_index) = self.select_action(choice.index, rng);
        let context = self.grids.contexts[choice.index].clone();
        let action = self.grids.actions[action_index].clone();
        let comparator = self.grids.actions[comparator_index].clone();
        let outcome = duel(env, &context, &action, &comparator, rng)?;
        let observation = PreferenceObservation {
            context,
            action,
            comparator,
            outcome,
        };
        let query_variance = self.observe(&observation)?;
        self.archive_snapshot();
        Ok(StepRecord {
            observation,
            context_index: choice.index,
            action_index,
            comparator_index,
            acquisition: choice.acquisition,
            beta,
            query_variance,
        })
    }

    /// Pessimistic policy on the state's grids.
    pub fn extract_policy(&self) -> Result<GridPolicy> {
        let last = *self.archive.last().ok_or_else(|| Error::State("archive is empty".into()))?;
        let mut table = self.best_lcb.clone();
        if !last.snapshot {
            if last.observations == self.posterior.len() {
                for (g, best) in table.iter_mut().enumerate() {
                    let lcb = self.cache.mean(g) - last.beta * self.cache.stddev(g);
                    if lcb > *best {
                        *best = lcb;
                    }
                }
            } else {
                let joint = self.grids.joint_points();
                for (g, best) in table.iter_mut().enumerate() {
                    let (m, v) = self.posterior.prefix_path(&joint[g])?[last.observations];
                    *best = best.max(m - last.beta * v.sqrt());
                }
            }
        }
        Ok(policy_from_table(&table, self.grids.num_actions()))
    }

    /// Pessimistic policy on arbitrary grids, evaluated directly from the
    /// prefix posteriors of every archived entry.
    pub fn extract_policy_on(&self, contexts: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<GridPolicy> {
        if self.archive.is_empty() {
            return Err(Error::State("archive is empty".into()));
        }
        if contexts.is_empty() || actions.is_empty() {
            return Err(Error::invalid("policy grids must be non-empty"));
        }
        let last = self.archive.len() - 1;
        let used: Vec<&ArchiveEntry> = self
            .archive
            .iter()
            .enumerate()
            .filter(|(i, e)| e.snapshot || *i == last)
            .map(|(_, e)| e)
            .collect();
        let mut table = Vec::with_capacity(contexts.len() * actions.len());
        for x in contexts {
            for a in actions {
                let mut z = x.clone();
                z.extend_from_slice(a);
                let path = self.posterior.prefix_path(&z)?;
                let best = used
                    .iter()
                    .map(|e| {
                        let (m, v) = path[e.observations];
                        m - e.beta * v.sqrt()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                table.push(best);
            }
        }
        Ok(policy_from_table(&table, actions.len()))
    }
}

/// Row-wise argmax (lowest index on ties) of a `contexts × actions` table.
pub fn policy_from_table(table: &[f64], num_actions: usize) -> GridPolicy {
    let mut actions = Vec::with_capacity(table.len() / num_actions.max(1));
    let mut values = Vec::with_capacity(actions.capacity());
    for row in table.chunks(num_actions) {
        let a = argmax_first(row);
        actions.push(a);
        values.push(row[a]);
    }
    GridPolicy { actions, values }
}

/// `n0` observations with context, action and comparator drawn uniformly
/// from the unit cubes and outcomes from the environment.
pub fn warmup<R: Rng + ?Sized>(env: &Environment, n0: usize, rng: &mut R) -> Result<Vec<PreferenceObservation>> {
    let (dc, da) = (env.context_dim(), env.action_dim());
    let mut out = Vec::with_capacity(n0);
    for _ in 0..n0 {
        let context: Vec<f64> = (0..dc).map(|_| rng.random()).collect();
        let action: Vec<f64> = (0..da).map(|_| rng.random()).collect();
        let comparator: Vec<f64> = (0..da).map(|_| rng.random()).collect();
        let outcome = duel(env, &context, &action, &comparator, rng)?;
        out.push(PreferenceObservation {
            context,
            action,
            comparator,
            outcome,
        });
    }
    Ok(out)
}
