//! Prompt acquisition for preference optimization of token policies.
//!
//! A completion's implicit reward is `γ log π_θ(a|x)/π_ref(a|x)`; dropout
//! spread in `π_θ` turns it into an interval. The generalized Borda bounds
//! push that interval through the logistic against comparators sampled
//! from the reference, and a prompt's acquisition value is the gap between
//! its optimistic and pessimistic best candidate.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{logistic, LinkFunction};
use crate::error::{Error, Result};
use crate::policy::{dpo_step, sample_completion, sequence_bounds, DpoExample, PolicyEnsemble, Token, ToyPolicy};
use crate::posterior::argmax_first;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateBounds {
    pub ucb: f64,
    pub lcb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedBordaEstimate {
    pub prompt: Vec<Token>,
    /// One entry per candidate completion, in input order.
    pub candidates: Vec<CandidateBounds>,
    pub num_comparators: usize,
}

impl GeneralizedBordaEstimate {
    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub alpha: f64,
}

/// Interval `[L, U]` on `log π_θ(a|x) − log π_ref(a|x)`.
fn log_ratio_bounds<P, Q>(policy: &P, reference: &Q, prompt: &[Token], completion: &[Token], beta: f64) -> Result<(f64, f64)>
where
    P: PolicyEnsemble + ?Sized,
    Q: PolicyEnsemble + ?Sized,
{
    let b = sequence_bounds(policy, prompt, completion, beta)?;
    let base = reference.sequence_log_prob(prompt, completion, 0);
    Ok((b.lower - base, b.upper - base))
}

fn check_scales(gamma: f64, beta: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma must be positive"));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta must be non-negative"));
    }
    Ok(())
}

/// Optimistic and pessimistic generalized Borda values of each candidate
/// against the comparator sample:
///
/// ```text
/// ucb(a) = mean_i ρ(γ (U(a) − L(a′_i)))
/// lcb(a) = mean_i ρ(γ (L(a) − U(a′_i)))
/// ```
pub fn generalized_borda_bounds<P, Q>(
    policy: &P,
    reference: &Q,
    prompt: &[Token],
    candidates: &[Vec<Token>],
    comparators: &[Vec<Token>],
    gamma: f64,
    beta: f64,
) -> Result<GeneralizedBordaEstimate>
where
    P: PolicyEnsemble + ?Sized,
    Q: PolicyEnsemble + ?Sized,
{
    check_scales(gamma, beta)?;
    if candidates.is_empty() || comparators.is_empty() {
        return Err(Error::invalid("candidates and comparators must be non-empty"));
    }
    let comp: Vec<(f64, f64)> = comparators
        .iter()
        .map(|c| log_ratio_bounds(policy, reference, prompt, c, beta))
        .collect::<Result<_>>()?;
    let n = comp.len() as f64;
    let mut out = Vec::with_capacity(candidates.len());
    for a in candidates {
        let (lo, hi) = log_ratio_bounds(policy, reference, prompt, a, beta)?;
        let ucb = comp.iter().map(|(cl, _)| logistic(gamma * (hi - cl))).sum::<f64>() / n;
        let lcb = comp.iter().map(|(_, cu)| logistic(gamma * (lo - cu))).sum::<f64>() / n;
        out.push(CandidateBounds { ucb, lcb });
    }
    Ok(GeneralizedBordaEstimate {
        prompt: prompt.to_vec(),
        candidates: out,
        num_comparators: comparators.len(),
    })
}

/// `max upper − max lower` over `(upper, lower)` pairs.
pub fn alpha_from_bounds(bounds: &[(f64, f64)]) -> Result<f64> {
    if bounds.is_empty() {
        return Err(Error::invalid("acquisition needs at least one candidate"));
    }
    let hi = bounds.iter().map(|b| b.0).fold(f64::NEG_INFINITY, f64::max);
    let lo = bounds.iter().map(|b| b.1).fold(f64::NEG_INFINITY, f64::max);
    Ok((hi - lo).max(0.0))
}

pub fn acquisition_alpha(estimate: &GeneralizedBordaEstimate) -> Result<AcquisitionScore> {
    let pairs: Vec<(f64, f64)> = estimate.candidates.iter().map(|c| (c.ucb, c.lcb)).collect();
    Ok(AcquisitionScore {
        alpha: alpha_from_bounds(&pairs)?,
    })
}

/// Bounds `γ(Σμ ± βΣσ − log π_ref(a|x))` on each candidate's implicit
/// reward.
pub fn reward_bounds<P, Q>(policy: &P, reference: &Q, prompt: &[Token], candidates: &[Vec<Token>], gamma: f64, beta: f64) -> Result<Vec<(f64, f64)>>
where
    P: PolicyEnsemble + ?Sized,
    Q: PolicyEnsemble + ?Sized,
{
    check_scales(gamma, beta)?;
    candidates
        .iter()
        .map(|a| {
            let (lo, hi) = log_ratio_bounds(policy, reference, prompt, a, beta)?;
            Ok((gamma * hi, gamma * lo))
        })
        .collect()
}

/// Acquisition from reward bounds: `max_a r̄ − max_a r̲`.
pub fn reward_alpha<P, Q>(policy: &P, reference: &Q, prompt: &[Token], candidates: &[Vec<Token>], gamma: f64, beta: f64) -> Result<AcquisitionScore>
where
    P: PolicyEnsemble + ?Sized,
    Q: PolicyEnsemble + ?Sized,
{
    let bounds = reward_bounds(policy, reference, prompt, candidates, gamma, beta)?;
    Ok(AcquisitionScore {
        alpha: alpha_from_bounds(&bounds)?,
    })
}

/// Indices of the `b` highest scores, highest first; equal scores keep
/// input order.
pub fn top_b(scores: &[f64], b: usize) -> Result<Vec<usize>> {
    if b == 0 || b > scores.len() {
        return Err(Error::invalid(format!("batch size {b} outside 1..={}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    order.truncate(b);
    Ok(order)
}

/// Score every prompt with `scorer` (in input order) and keep the top `b`.
pub fn select_batch<T, F>(prompts: &[T], mut scorer: F, b: usize) -> Result<Vec<usize>>
where
    F: FnMut(usize, &T) -> Result<f64>,
{
    if b == 0 || b > prompts.len() {
        return Err(Error::invalid(format!("batch size {b} outside 1..={}", prompts.len())));
    }
    let scores = prompts.iter().enumerate().map(|(i, p)| scorer(i, p)).collect::<Result<Vec<_>>>()?;
    top_b(&scores, b)
}

/// Source of binary preference labels.
pub trait PreferenceOracle {
    /// `true` when `action` is preferred over `comparator` for `prompt`.
    fn label(&mut self, prompt: &[Token], action: &[Token], comparator: &[Token]) -> Result<bool>;
}

/// Ground-truth reward on completions used by [`SyntheticOracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ToyReward {
    /// `per_token × length`.
    Length { per_token: f64 },
    /// Sum of per-token values.
    TokenValues { values: Vec<f64> },
}

impl ToyReward {
    pub fn eval(&self, completion: &[Token]) -> f64 {
        match self {
            ToyReward::Length { per_token } => per_token * completion.len() as f64,
            ToyReward::TokenValues { values } => completion.iter().map(|&t| values.get(t as usize).copied().unwrap_or(0.0)).sum(),
        }
    }
}

/// Link-function preferences over a toy reward.
#[derive(Debug, Clone)]
pub struct SyntheticOracle<R> {
    pub reward: ToyReward,
    pub link: LinkFunction,
    rng: R,
}

impl<R: Rng> SyntheticOracle<R> {
    pub fn new(reward: ToyReward, link: LinkFunction, rng: R) -> Self {
        Self { reward, link, rng }
    }

    pub fn probability(&self, action: &[Token], comparator: &[Token]) -> f64 {
        self.link.eval(self.reward.eval(action) - self.reward.eval(comparator))
    }
}

impl<R: Rng> PreferenceOracle for SyntheticOracle<R> {
    fn label(&mut self, _prompt: &[Token], action: &[Token], comparator: &[Token]) -> Result<bool> {
        let p = self.probability(action, comparator);
        Ok(self.rng.random::<f64>() < p)
    }
}

/// One labeled tuple in a replay file (one JSON object per line).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledTuple {
    pub prompt: Vec<Token>,
    pub action: Vec<Token>,
    pub comparator: Vec<Token>,
    pub outcome: bool,
}

type TupleKey = (Vec<Token>, Vec<Token>, Vec<Token>);

/// Replays labels from a JSON-lines file. A tuple missing from the file is
/// an oracle error; the swapped pair is answered with the negated label.
#[derive(Debug, Clone)]
pub struct ReplayOracle {
    path: PathBuf,
    labels: HashMap<TupleKey, bool>,
}

impl ReplayOracle {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::Oracle(format!("{}: {e}", path.display())))?;
        let mut labels = HashMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::Oracle(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let t: LabeledTuple = serde_json::from_str(&line)
                .map_err(|e| Error::Oracle(format!("{}:{}: {e}", path.display(), n + 1)))?;
            labels.insert((t.prompt, t.action, t.comparator), t.outcome);
        }
        Ok(Self { path, labels })
    }

    pub fn from_tuples(tuples: impl IntoIterator<Item = LabeledTuple>) -> Self {
        Self {
            path: PathBuf::new(),
            labels: tuples.into_iter().map(|t| ((t.prompt, t.action, t.comparator), t.outcome)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl PreferenceOracle for ReplayOracle {
    fn label(&mut self, prompt: &[Token], action: &[Token], comparator: &[Token]) -> Result<bool> {
        let key = (prompt.to_vec(), action.to_vec(), comparator.to_vec());
        if let Some(&w) = self.labels.get(&key) {
            return Ok(w);
        }
        let swapped = (prompt.to_vec(), comparator.to_vec(), action.to_vec());
        self.labels
            .get(&swapped)
            .map(|w| !w)
            .ok_or_else(|| Error::Oracle(format!("no label for {key:?} in {}", self.path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionArm {
    /// Generalized Borda bounds.
    AeBordaDpo,
    /// Reward bounds.
    AeDpo,
    /// Prompts and actions uniformly at random.
    Uniform,
}

impl SelectionArm {
    pub const ALL: [SelectionArm; 3] = [SelectionArm::AeBordaDpo, SelectionArm::AeDpo, SelectionArm::Uniform];

    pub fn name(self) -> &'static str {
        match self {
            SelectionArm::AeBordaDpo => "ae-borda-dpo",
            SelectionArm::AeDpo => "ae-dpo",
            SelectionArm::Uniform => "uniform",
        }
    }
}

impl std::fmt::Display for SelectionArm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundConfig {
    pub arm: SelectionArm,
    /// Labeled prompts per round (`b`).
    pub batch_size: usize,
    /// Policy samples per prompt (`m̃`).
    pub num_candidates: usize,
    /// Reference samples per prompt (`N`).
    pub num_comparators: usize,
    pub gamma: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub max_len: usize,
    pub temperature: f64,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            arm: SelectionArm::AeBordaDpo,
            batch_size: 4,
            num_candidates: 4,
            num_comparators: 8,
            gamma: 0.1,
            beta: 4.0,
            learning_rate: 0.5,
            max_len: 4,
            temperature: 1.0,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        check_scales(self.gamma, self.beta)?;
        if self.batch_size == 0 || self.num_candidates == 0 || self.num_comparators == 0 {
            return Err(Error::invalid("batch, candidate and comparator counts must be positive"));
        }
        if self.max_len == 0 {
            return Err(Error::invalid("max_len must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub policy: ToyPolicy,
    /// Pool indices of the labeled prompts, in selection order.
    pub selected: Vec<usize>,
    /// Acquisition value of every pool prompt (zero for the uniform arm).
    pub alphas: Vec<f64>,
    pub examples: Vec<DpoExample>,
}

struct Scored {
    candidates: Vec<Vec<Token>>,
    comparators: Vec<Vec<Token>>,
    /// Optimistic score per candidate, used to pick the action.
    optimism: Vec<f64>,
    alpha: f64,
}

fn score_prompt<R: Rng + ?Sized>(policy: &ToyPolicy, reference: &ToyPolicy, prompt: &[Token], config: &RoundConfig, rng: &mut R) -> Result<Scored> {
    let candidates = (0..config.num_candidates)
        .map(|_| sample_completion(policy, prompt, config.max_len, config.temperature, rng).map(|s| s.tokens))
        .collect::<Result<Vec<_>>>()?;
    let comparators = (0..config.num_comparators)
        .map(|_| sample_completion(reference, prompt, config.max_len, config.temperature, rng).map(|s| s.tokens))
        .collect::<Result<Vec<_>>>()?;
    let (optimism, alpha) = match config.arm {
        SelectionArm::AeBordaDpo | SelectionArm::Uniform => {
            let est = generalized_borda_bounds(policy, reference, prompt, &candidates, &comparators, config.gamma, config.beta)?;
            let alpha = acquisition_alpha(&est)?.alpha;
            (est.candidates.iter().map(|c| c.ucb).collect(), alpha)
        }
        SelectionArm::AeDpo => {
            let bounds = reward_bounds(policy, reference, prompt, &candidates, config.gamma, config.beta)?;
            (bounds.iter().map(|b| b.0).collect(), alpha_from_bounds(&bounds)?)
        }
    };
    Ok(Scored {
        candidates,
        comparators,
        optimism,
        alpha,
    })
}

/// One round of active preference optimization over `pool`: score every
/// prompt, keep the top `b`, pair the optimistic candidate with a uniformly
/// chosen reference sample, label, and take one DPO step. The uniform arm
/// picks prompts and candidates at random instead.
///
/// On an oracle failure the error is returned and no update happens.
pub fn active_dpo_round<O, R>(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pool: &[Vec<Token>],
    config: &RoundConfig,
    oracle: &mut O,
    rng: &mut R,
) -> Result<RoundOutcome>
where
    O: PreferenceOracle + ?Sized,
    R: Rng + ?Sized,
{
    config.validate()?;
    if config.batch_size > pool.len() {
        return Err(Error::invalid(format!("batch size {} exceeds pool size {}", config.batch_size, pool.len())));
    }
    if pool.iter().any(Vec::is_empty) {
        return Err(Error::invalid("prompts must be non-empty"));
    }
    let (selected, alphas, scored) = match config.arm {
        SelectionArm::Uniform => {
            let mut picks = sample_indices(rng, pool.len(), config.batch_size).into_vec();
            picks.sort_unstable();
            let scored = picks
                .iter()
                .map(|&i| score_prompt(policy, reference, &pool[i], config, rng))
                .collect::<Result<Vec<_>>>()?;
            (picks, vec![0.0; pool.len()], scored)
        }
        SelectionArm::AeBordaDpo | SelectionArm::AeDpo => {
            let mut all = pool
                .iter()
                .map(|p| score_prompt(policy, reference, p, config, rng).map(Some))
                .collect::<Result<Vec<_>>>()?;
            let alphas: Vec<f64> = all.iter().map(|s| s.as_ref().map_or(0.0, |s| s.alpha)).collect();
            let picks = top_b(&alphas, config.batch_size)?;
            let scored = picks.iter().map(|&i| all[i].take().expect("each index picked once")).collect();
            (picks, alphas, scored)
        }
    };
    let mut examples = Vec::with_capacity(selected.len());
    for (&i, s) in selected.iter().zip(&scored) {
        let a = match config.arm {
            SelectionArm::Uniform => rng.random_range(0..s.candidates.len()),
            _ => argmax_first(&s.optimism),
        };
        let c = rng.random_range(0..s.comparators.len());
        let (action, comparator) = (s.candidates[a].clone(), s.comparators[c].clone());
        let outcome = oracle.label(&pool[i], &action, &comparator)?;
        examples.push(DpoExample {
            prompt: pool[i].clone(),
            action,
            comparator,
            outcome,
        });
    }
    let next = dpo_step(policy, reference, &examples, config.gamma, config.learning_rate)?;
    Ok(RoundOutcome {
        policy: next,
        selected,
        alphas,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{greedy_decode, ToyPolicyConfig};
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(vocab: usize, len: usize, end: Option<Token>) -> ToyPolicyConfig {
        ToyPolicyConfig {
            vocab_size: vocab,
            max_len: len,
            end_token: end,
            dropout: 0.2,
            num_masks: 6,
            init_scale: 0.8,
        }
    }

    fn pair(seed: u64) -> (ToyPolicy, ToyPolicy) {
        let r = ToyPolicy::new(cfg(3, 2, None), seed).unwrap().as_reference();
        let p = ToyPolicy::new(cfg(3, 2, None), seed + 1000).unwrap();
        (p, r)
    }

    fn all_completions(vocab: Token, len: usize) -> Vec<Vec<Token>> {
        let mut out = vec![vec![]];
        for _ in 0..len {
            out = out
                .into_iter()
                .flat_map(|s| (0..vocab).map(move |t| [s.clone(), vec![t]].concat()))
                .collect();
        }
        out
    }

    #[test]
    fn identical_policies_sit_at_one_half() {
        let (_, r) = pair(1);
        let cands = all_completions(3, 2);
        let est = generalized_borda_bounds(&r, &r, &[1], &cands, &cands[..4], 0.5, 0.0).unwrap();
        assert!(est.candidates.iter().all(|c| c.ucb == 0.5 && c.lcb == 0.5));
        assert_eq!(acquisition_alpha(&est).unwrap().alpha, 0.0);
    }

    #[test]
    fn self_duel_is_one_half() {
        let (p, r) = pair(2);
        let a = vec![vec![2, 1]];
        let est = generalized_borda_bounds(&p, &r, &[0, 2], &a, &a, 0.7, 0.0).unwrap();
        assert!((est.candidates[0].ucb - 0.5).abs() < 1e-15);
        assert_eq!(est.num_comparators, 1);
        assert_eq!(est.num_candidates(), 1);
    }

    #[test]
    fn plug_in_estimate_matches_enumeration() {
        for seed in 0..5 {
            let (p, r) = pair(10 + seed);
            let prompt = [1, 2];
            let gamma = 1.0;
            let a = vec![0, 2];
            let mu = |c: &[Token]| sequence_bounds(&p, &prompt, c, 0.0).unwrap().upper - r.sequence_log_prob(&prompt, c, 0);
            let exact: f64 = all_completions(3, 2)
                .iter()
                .map(|c| r.sequence_log_prob(&prompt, c, 0).exp() * logistic(gamma * (mu(&a) - mu(c))))
                .sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 2000;
            let comps: Vec<Vec<Token>> = (0..n).map(|_| sample_completion(&r, &prompt, 2, 1.0, &mut rng).unwrap().tokens).collect();
            let terms: Vec<f64> = comps.iter().map(|c| logistic(gamma * (mu(&a) - mu(c)))).collect();
            let mean = terms.iter().sum::<f64>() / n as f64;
            let sd = (terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            let est = generalized_borda_bounds(&p, &r, &prompt, std::slice::from_ref(&a), &comps, gamma, 0.0).unwrap();
            assert!((est.candidates[0].ucb - mean).abs() < 1e-12);
            assert!((mean - exact).abs() <= 3.0 * sd / (n as f64).sqrt(), "seed {seed}");
        }
    }

    #[test]
    fn alpha_arithmetic() {
        assert!((alpha_from_bounds(&[(0.8, 0.3)]).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(alpha_from_bounds(&[(2.0, 1.0), (5.0, 3.0)]).unwrap(), 2.0);
        assert!(alpha_from_bounds(&[]).is_err());
    }

    #[test]
    fn reward_alpha_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..50 {
            let (p, r) = pair(100 + trial);
            let prompt = vec![rng.random_range(0..3) as Token];
            let cands: Vec<Vec<Token>> = (0..4).map(|_| sample_completion(&p, &prompt, 2, 1.0, &mut rng).unwrap().tokens).collect();
            let (gamma, beta) = (0.3, 2.0);
            let mut hi = f64::NEG_INFINITY;
            let mut lo = f64::NEG_INFINITY;
            for c in &cands {
                let (mut mu, mut sd) = (0.0, 0.0);
                for i in 0..c.len() {
                    let s = crate::policy::token_stats(&p, &prompt, &c[..i], c[i]);
                    mu += s.mean;
                    sd += s.stddev;
                }
                let base = r.sequence_log_prob(&prompt, c, 0);
                hi = hi.max(gamma * (mu + beta * sd - base));
                lo = lo.max(gamma * (mu - beta * sd - base));
            }
            let got = reward_alpha(&p, &r, &prompt, &cands, gamma, beta).unwrap().alpha;
            assert!((got - (hi - lo)).abs() < 1e-12);
            assert_eq!(reward_alpha(&p, &r, &prompt, &cands, gamma, 0.0).unwrap().alpha, 0.0);
        }
    }

    #[test]
    fn acquisition_matches_double_max() {
        let (p, r) = pair(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prompt = [0];
        let cands: Vec<Vec<Token>> = (0..5).map(|_| sample_completion(&p, &prompt, 2, 1.0, &mut rng).unwrap().tokens).collect();
        let comps: Vec<Vec<Token>> = (0..8).map(|_| sample_completion(&r, &prompt, 2, 1.0, &mut rng).unwrap().tokens).collect();
        let est = generalized_borda_bounds(&p, &r, &prompt, &cands, &comps, 0.5, 1.0).unwrap();
        let hi = est.candidates.iter().map(|c| c.ucb).fold(f64::NEG_INFINITY, f64::max);
        let lo = est.candidates.iter().map(|c| c.lcb).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(acquisition_alpha(&est).unwrap().alpha, hi - lo);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn bounds_are_ordered_and_monotone_in_beta(seed in 0u64..500, beta in 0.0f64..3.0, extra in 0.0f64..3.0) {
            let (p, r) = pair(seed);
            let cands = all_completions(3, 2);
            let comps = &cands[..3];
            let a = generalized_borda_bounds(&p, &r, &[2], &cands, comps, 0.5, beta).unwrap();
            let b = generalized_borda_bounds(&p, &r, &[2], &cands, comps, 0.5, beta + extra).unwrap();
            for (x, y) in a.candidates.iter().zip(&b.candidates) {
                prop_assert!(0.0 <= x.lcb && x.lcb <= x.ucb && x.ucb <= 1.0);
                prop_assert!(y.ucb >= x.ucb - 1e-15);
                prop_assert!(y.lcb <= x.lcb + 1e-15);
            }
            prop_assert!(acquisition_alpha(&a).unwrap().alpha >= 0.0);
        }

        #[test]
        fn top_b_matches_full_sort(scores in prop::collection::vec(-5.0f64..5.0, 1..40), frac in 0.0f64..1.0) {
            let b = 1 + ((scores.len() - 1) as f64 * frac) as usize;
            let picks = top_b(&scores, b).unwrap();
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
            prop_assert_eq!(&picks, &order[..b].to_vec());
            let worst = picks.iter().map(|&i| scores[i]).fold(f64::INFINITY, f64::min);
            for i in (0..scores.len()).filter(|i| !picks.contains(i)) {
                prop_assert!(worst >= scores[i]);
            }
        }
    }

    #[test]
    fn bounds_ignore_uniform_logit_shift() {
        // Dropout acts per weight, so only the noiseless model is invariant.
        let p = ToyPolicy::new(ToyPolicyConfig { dropout: 0.0, ..cfg(3, 2, None) }, 5).unwrap();
        let r = ToyPolicy::new(cfg(3, 2, None), 6).unwrap().as_reference();
        let cands = all_completions(3, 2);
        let comps = &cands[2..6];
        let base = generalized_borda_bounds(&p, &r, &[1], &cands, comps, 0.5, 1.0).unwrap();
        let shift = |q: &ToyPolicy, c: f64| {
            let mut q = q.clone();
            for t in 0..3 {
                let i = q.param_index(0, t);
                q.parameters_mut()[i] += c;
            }
            q
        };
        let shifted = generalized_borda_bounds(&shift(&p, 2.5), &shift(&r, -1.0), &[1], &cands, comps, 0.5, 1.0).unwrap();
        for (x, y) in base.candidates.iter().zip(&shifted.candidates) {
            assert!((x.ucb - y.ucb).abs() < 1e-12 && (x.lcb - y.lcb).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_selection_rules() {
        assert_eq!(top_b(&[0.0; 5], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(top_b(&[0.1, 0.3, 0.2], 3).unwrap(), vec![1, 2, 0]);
        assert!(top_b(&[1.0, 2.0], 0).is_err());
        assert!(top_b(&[1.0, 2.0], 3).is_err());
        let prompts = ["a", "bb", "c"];
        let picks = select_batch(&prompts, |_, p| Ok(p.len() as f64), 1).unwrap();
        assert_eq!(picks, vec![1]);
    }

    fn pool(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<Vec<Token>> {
        (0..n).map(|_| (0..2).map(|_| rng.random_range(1..vocab) as Token).collect()).collect()
    }

    #[test]
    fn zero_rate_round_keeps_policy_and_collects_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = ToyPolicy::new(cfg(5, 3, Some(0)), 6).unwrap();
        let r = p.as_reference();
        let prompts = pool(&mut rng, 10, 5);
        for arm in SelectionArm::ALL {
            let config = RoundConfig {
                arm,
                learning_rate: 0.0,
                batch_size: 4,
                ..RoundConfig::default()
            };
            let mut oracle = SyntheticOracle::new(ToyReward::Length { per_token: 1.0 }, LinkFunction::logistic(), ChaCha8Rng::seed_from_u64(1));
            let out = active_dpo_round(&p, &r, &prompts, &config, &mut oracle, &mut rng).unwrap();
            assert_eq!(out.policy, p);
            assert_eq!(out.examples.len(), 4);
            assert_eq!(out.selected.len(), 4);
        }
    }

    #[test]
    fn zero_beta_falls_back_to_input_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = ToyPolicy::new(cfg(5, 3, Some(0)), 7).unwrap();
        let prompts = pool(&mut rng, 8, 5);
        let config = RoundConfig {
            beta: 0.0,
            batch_size: 3,
            ..RoundConfig::default()
        };
        let mut oracle = SyntheticOracle::new(ToyReward::Length { per_token: 1.0 }, LinkFunction::logistic(), ChaCha8Rng::seed_from_u64(2));
        let out = active_dpo_round(&p, &p.as_reference(), &prompts, &config, &mut oracle, &mut rng).unwrap();
        assert_eq!(out.selected, vec![0, 1, 2]);
        assert!(out.alphas.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn rounds_are_deterministic_and_oracle_failures_surface() {
        let p = ToyPolicy::new(cfg(5, 3, Some(0)), 8).unwrap();
        let r = p.as_reference();
        let prompts = pool(&mut ChaCha8Rng::seed_from_u64(8), 6, 5);
        let run = || {
            let mut oracle = SyntheticOracle::new(ToyReward::Length { per_token: 1.0 }, LinkFunction::logistic(), ChaCha8Rng::seed_from_u64(3));
            active_dpo_round(&p, &r, &prompts, &RoundConfig::default(), &mut oracle, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
        };
        assert_eq!(run(), run());
        let mut empty = ReplayOracle::from_tuples(Vec::new());
        let err = active_dpo_round(&p, &r, &prompts, &RoundConfig::default(), &mut empty, &mut ChaCha8Rng::seed_from_u64(9));
        assert!(matches!(err, Err(Error::Oracle(_))));
    }

    #[test]
    fn replay_oracle_reads_json_lines() {
        let dir = std::env::temp_dir().join(format!("borda-replay-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("labels.jsonl");
        let t = LabeledTuple {
            prompt: vec![1],
            action: vec![2, 3],
            comparator: vec![4],
            outcome: true,
        };
        std::fs::write(&path, format!("{}\n\n", serde_json::to_string(&t).unwrap())).unwrap();
        let mut oracle = ReplayOracle::from_path(&path).unwrap();
        assert_eq!(oracle.len(), 1);
        assert!(oracle.label(&[1], &[2, 3], &[4]).unwrap());
        assert!(!oracle.label(&[1], &[4], &[2, 3]).unwrap());
        assert!(oracle.label(&[1], &[4], &[4]).is_err());
        assert!(ReplayOracle::from_path(dir.join("missing.jsonl")).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn length_preference_lengthens_greedy_decodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let config_policy = ToyPolicyConfig {
            vocab_size: 6,
            max_len: 6,
            end_token: Some(0),
            dropout: 0.1,
            num_masks: 4,
            init_scale: 0.3,
        };
        // Bias the start towards ending early so there is room to grow.
        let mut reference = ToyPolicy::new(config_policy, 11).unwrap();
        let eos = reference.param_index(0, 0);
        reference.parameters_mut()[eos] += 1.5;
        let mut policy = reference.clone();
        let reference = reference.as_reference();
        let prompts = pool(&mut rng, 16, 6);
        let mean_len = |q: &ToyPolicy| {
            let det = q.as_reference();
            prompts.iter().map(|x| greedy_decode(&det, x, 6).unwrap().len() as f64).sum::<f64>() / prompts.len() as f64
        };
        let before = mean_len(&policy);
        let config = RoundConfig {
            max_len: 6,
            learning_rate: 1.0,
            gamma: 0.5,
            ..RoundConfig::default()
        };
        let mut oracle = SyntheticOracle::new(ToyReward::Length { per_token: 1.0 }, LinkFunction::logistic(), ChaCha8Rng::seed_from_u64(12));
        for _ in 0..200 {
            policy = active_dpo_round(&policy, &reference, &prompts, &config, &mut oracle, &mut rng).unwrap().policy;
        }
        let after = mean_len(&policy);
        assert!(after > before, "{before} -> {after}");
    }
}
