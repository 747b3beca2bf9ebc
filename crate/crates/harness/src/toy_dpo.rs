//! Toy active preference-optimization campaigns.
//!
//! Each `(seed, arm)` trial starts from a freshly initialized policy whose
//! deterministic pass is the frozen reference. The arms of one seed see the
//! same evaluation prompts and the same per-round prompt pools.

use borda_core::acquisition::{active_dpo_round, SyntheticOracle};
use borda_core::{greedy_decode, LinkFunction, RoundConfig, SelectionArm, Token, ToyPolicy, ToyReward};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ToyDpoSection};
use crate::error::Result;
use crate::output::{ToyDpoRecord, ToyDpoSummary};
use crate::simulate::with_workers;

const EVAL_STREAM: u64 = 1;
const POOL_STREAM: u64 = 2;
const ROUND_STREAM: u64 = 3;
const ORACLE_STREAM: u64 = 4;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToyDpoOutput {
    pub records: Vec<ToyDpoRecord>,
    pub summaries: Vec<ToyDpoSummary>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Prompts of `len` tokens, never containing the end token.
fn draw_prompts<R: Rng>(section: &ToyDpoSection, n: usize, rng: &mut R) -> Vec<Vec<Token>> {
    let tokens: Vec<Token> = (0..section.policy.vocab_size as Token)
        .filter(|&t| Some(t) != section.policy.end_token)
        .collect();
    (0..n)
        .map(|_| (0..section.prompt_len).map(|_| tokens[rng.random_range(0..tokens.len())]).collect())
        .collect()
}

/// Expected oracle preference of `policy`'s greedy decodes over the
/// reference's, with mean decode length.
pub fn greedy_win_rate(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    prompts: &[Vec<Token>],
    reward: &ToyReward,
    link: &LinkFunction,
    max_len: usize,
) -> Result<(f64, f64)> {
    let deterministic = policy.as_reference();
    let mut win = 0.0;
    let mut len = 0.0;
    for x in prompts {
        let a = greedy_decode(&deterministic, x, max_len)?;
        let b = greedy_decode(reference, x, max_len)?;
        win += link.eval(reward.eval(&a.tokens) - reward.eval(&b.tokens));
        len += a.len() as f64;
    }
    let n = prompts.len() as f64;
    Ok((win / n, len / n))
}

pub fn run_toy_dpo(config: &ExperimentConfig) -> Result<ToyDpoOutput> {
    config.validate()?;
    let section = &config.toy_dpo;
    let mut jobs: Vec<(u64, SelectionArm)> = config
        .effective_seeds()
        .into_iter()
        .flat_map(|s| section.arms.iter().map(move |&a| (s, a)))
        .collect();
    jobs.sort();
    jobs.dedup();
    let trials = with_workers(config.workers, || {
        jobs.par_iter()
            .map(|&(seed, arm)| run_arm(section, seed, arm))
            .collect::<Result<Vec<_>>>()
    })??;
    let records: Vec<ToyDpoRecord> = trials.into_iter().flatten().collect();
    let summaries = summarize(&records, &section.arms);
    Ok(ToyDpoOutput { records, summaries })
}

fn run_arm(section: &ToyDpoSection, seed: u64, arm: SelectionArm) -> Result<Vec<ToyDpoRecord>> {
    let mut policy = ToyPolicy::new(section.policy, seed)?;
    let reference = policy.as_reference();
    let eval_prompts = draw_prompts(section, section.eval_prompts, &mut stream(seed, EVAL_STREAM));
    let mut pools = stream(seed, POOL_STREAM);
    let mut rng = stream(seed, ROUND_STREAM);
    let mut oracle = SyntheticOracle::new(section.reward.clone(), section.link, stream(seed, ORACLE_STREAM));
    let round = RoundConfig { arm, ..section.round };
    let max_len = section.round.max_len;
    let mut out = Vec::with_capacity(section.rounds + 1);
    let (win_rate, mean_completion_len) = greedy_win_rate(&policy, &reference, &eval_prompts, &section.reward, &section.link, max_len)?;
    out.push(ToyDpoRecord {
        seed,
        arm,
        round: 0,
        win_rate,
        mean_completion_len,
        mean_alpha: None,
    });
    for r in 1..=section.rounds {
        let pool = draw_prompts(section, section.pool_size, &mut pools);
        let step = active_dpo_round(&policy, &reference, &pool, &round, &mut oracle, &mut rng)?;
        let mean_alpha = step.selected.iter().map(|&i| step.alphas[i]).sum::<f64>() / step.selected.len() as f64;
        policy = step.policy;
        let (win_rate, mean_completion_len) = greedy_win_rate(&policy, &reference, &eval_prompts, &section.reward, &section.link, max_len)?;
        out.push(ToyDpoRecord {
            seed,
            arm,
            round: r,
            win_rate,
            mean_completion_len,
            mean_alpha: Some(mean_alpha),
        });
    }
    Ok(out)
}

/// Mean win rate per arm and round with its standard error over seeds.
pub fn summarize(records: &[ToyDpoRecord], arms: &[SelectionArm]) -> Vec<ToyDpoSummary> {
    let mut arms = arms.to_vec();
    arms.sort();
    arms.dedup();
    let rounds = records.iter().map(|r| r.round).max().map_or(0, |m| m + 1);
    let mut out = Vec::new();
    for &arm in &arms {
        for round in 0..rounds {
            let w: Vec<f64> = records.iter().filter(|r| r.arm == arm && r.round == round).map(|r| r.win_rate).collect();
            if w.is_empty() {
                continue;
            }
            let n = w.len() as f64;
            let mean = w.iter().sum::<f64>() / n;
            let standard_error = if w.len() < 2 {
                0.0
            } else {
                (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            };
            out.push(ToyDpoSummary {
                arm,
                round,
                num_seeds: w.len(),
                mean_win_rate: mean,
                standard_error,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;

    fn small(rounds: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::for_experiment(ExperimentKind::ToyDpo);
        c.seeds = vec![0, 1];
        c.toy_dpo.rounds = rounds;
        c.toy_dpo.pool_size = 8;
        c.toy_dpo.eval_prompts = 16;
        c
    }

    #[test]
    fn round_zero_is_a_coin_flip() {
        let out = run_toy_dpo(&small(0)).unwrap();
        assert_eq!(out.records.len(), 6);
        assert!(out.records.iter().all(|r| r.win_rate == 0.5 && r.mean_alpha.is_none()));
    }

    #[test]
    fn zero_learning_rate_never_moves() {
        let mut c = small(3);
        c.toy_dpo.round.learning_rate = 0.0;
        let out = run_toy_dpo(&c).unwrap();
        assert_eq!(out.records.len(), 2 * 3 * 4);
        assert!(out.records.iter().all(|r| r.win_rate == 0.5));
        assert!(out.summaries.iter().all(|s| s.mean_win_rate == 0.5 && s.standard_error == 0.0));
    }

    #[test]
    fn runs_are_reproducible() {
        let a = run_toy_dpo(&small(3)).unwrap();
        let b = run_toy_dpo(&ExperimentConfig { workers: 2, ..small(3) }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn standard_errors_match_hand_computation() {
        let rec = |seed, win_rate| ToyDpoRecord {
            seed,
            arm: SelectionArm::Uniform,
            round: 0,
            win_rate,
            mean_completion_len: 0.0,
            mean_alpha: None,
        };
        let s = summarize(&[rec(0, 0.4), rec(1, 0.6), rec(2, 0.8)], &[SelectionArm::Uniform]);
        assert_eq!(s.len(), 1);
        assert!((s[0].mean_win_rate - 0.6).abs() < 1e-15);
        // sample sd 0.2, three seeds
        assert!((s[0].standard_error - 0.2 / 3f64.sqrt()).abs() < 1e-15);
    }
}
