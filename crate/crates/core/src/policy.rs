//! Token policies with dropout ensembles, and the DPO objective for a toy
//! autoregressive softmax policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{logistic, neg_log_logistic};
use crate::error::{Error, Result};
use crate::posterior::argmax_first;

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Prompt,
    Completion,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub role: Role,
}

impl TokenSequence {
    pub fn prompt(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::invalid("prompts must be non-empty"));
        }
        Ok(Self {
            tokens,
            role: Role::Prompt,
        })
    }

    /// Completions may be empty (abstention).
    pub fn completion(tokens: Vec<Token>) -> Self {
        Self {
            tokens,
            role: Role::Completion,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A stochastic token policy whose forward pass is indexed by a dropout
/// mask. Reference policies expose a single deterministic mask.
pub trait PolicyEnsemble {
    fn vocab_size(&self) -> usize;

    fn num_masks(&self) -> usize;

    fn is_reference(&self) -> bool;

    /// Token that terminates a completion, if any.
    fn end_token(&self) -> Option<Token>;

    /// Log-softmax over the vocabulary for the next token after `prefix`.
    fn log_probs(&self, prompt: &[Token], prefix: &[Token], mask: usize) -> Vec<f64>;

    fn sequence_log_prob(&self, prompt: &[Token], completion: &[Token], mask: usize) -> f64 {
        (0..completion.len())
            .map(|i| self.log_probs(prompt, &completion[..i], mask)[completion[i] as usize])
            .sum()
    }

    /// Mask-averaged next-token distribution.
    fn mean_probs(&self, prompt: &[Token], prefix: &[Token]) -> Vec<f64> {
        let m = self.num_masks();
        let mut out = vec![0.0; self.vocab_size()];
        for j in 0..m {
            for (o, lp) in out.iter_mut().zip(self.log_probs(prompt, prefix, j)) {
                *o += lp.exp();
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        out
    }
}

/// Mean and sample standard deviation (divisor `m − 1`) over masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub mean: f64,
    pub stddev: f64,
}

fn mean_std(values: &[f64]) -> TokenStats {
    if values.iter().all(|v| *v == values[0]) {
        return TokenStats {
            mean: values[0],
            stddev: 0.0,
        };
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    TokenStats {
        mean,
        stddev: (ss / (m - 1.0)).sqrt(),
    }
}

/// Mean and spread of `log π(token | prompt, prefix)` across masks.
pub fn token_stats<P: PolicyEnsemble + ?Sized>(ens: &P, prompt: &[Token], prefix: &[Token], token: Token) -> TokenStats {
    let values: Vec<f64> = (0..ens.num_masks())
        .map(|j| ens.log_probs(prompt, prefix, j)[token as usize])
        .collect();
    mean_std(&values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceBounds {
    pub upper: f64,
    pub lower: f64,
}

/// `Σᵢ μᵢ ± β Σᵢ σᵢ` over the completion's tokens.
pub fn sequence_bounds<P: PolicyEnsemble + ?Sized>(ens: &P, prompt: &[Token], completion: &[Token], beta: f64) -> Result<SequenceBounds> {
    if !(beta >= 0.0) {
        return Err(Error::invalid("beta must be non-negative"));
    }
    let (mut mu, mut sigma) = (0.0, 0.0);
    for i in 0..completion.len() {
        let s = token_stats(ens, prompt, &completion[..i], completion[i]);
        mu += s.mean;
        sigma += s.stddev;
    }
    Ok(SequenceBounds {
        upper: mu + beta * sigma,
        lower: mu - beta * sigma,
    })
}

/// Sample autoregressively from the mask-averaged distribution tempered by
/// `temperature`; a non-positive temperature decodes greedily.
pub fn sample_completion<P, R>(ens: &P, prompt: &[Token], max_len: usize, temperature: f64, rng: &mut R) -> Result<TokenSequence>
where
    P: PolicyEnsemble + ?Sized,
    R: Rng + ?Sized,
{
    if max_len == 0 {
        return Err(Error::invalid("max_len must be at least 1"));
    }
    let mut tokens = Vec::with_capacity(max_len);
    while tokens.len() < max_len {
        let probs = ens.mean_probs(prompt, &tokens);
        let next = if temperature <= 0.0 {
            argmax_first(&probs)
        } else {
            let logw: Vec<f64> = probs.iter().map(|p| p.ln() / temperature).collect();
            let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
            draw_categorical(&w, rng)
        } as Token;
        tokens.push(next);
        if Some(next) == ens.end_token() {
            break;
        }
    }
    Ok(TokenSequence::completion(tokens))
}

/// Most likely next token at every step.
pub fn greedy_decode<P: PolicyEnsemble + ?Sized>(ens: &P, prompt: &[Token], max_len: usize) -> Result<TokenSequence> {
    sample_completion(ens, prompt, max_len, 0.0, &mut ChaCha8Rng::seed_from_u64(0))
}

fn draw_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyPolicyConfig {
    pub vocab_size: usize,
    /// Longest completion; also the size of the position one-hot.
    pub max_len: usize,
    pub end_token: Option<Token>,
    /// Fraction of parameters zeroed by each mask.
    pub dropout: f64,
    pub num_masks: usize,
    pub init_scale: f64,
}

impl Default for ToyPolicyConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8,
            max_len: 4,
            end_token: Some(0),
            dropout: 0.05,
            num_masks: 8,
            init_scale: 0.5,
        }
    }
}

impl ToyPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=64).contains(&self.vocab_size) {
            return Err(Error::invalid("vocabulary size must be in 2..=64"));
        }
        if !(1..=8).contains(&self.max_len) {
            return Err(Error::invalid("max_len must be in 1..=8"));
        }
        if let Some(e) = self.end_token {
            if e as usize >= self.vocab_size {
                return Err(Error::invalid("end token outside the vocabulary"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.num_masks < 2 {
            return Err(Error::invalid("an ensemble needs at least two masks"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::invalid("init scale must be non-negative"));
        }
        Ok(())
    }

    /// Bias, prompt bag, previous token (with a start slot), position.
    pub fn num_features(&self) -> usize {
        1 + self.vocab_size + (self.vocab_size + 1) + self.max_len
    }
}

/// Bag-of-features linear softmax: the logit of token `t` is
/// `Σ_f x_f θ[f, t]` with features for a bias, the prompt's token counts,
/// the previous token, and the position. Mask `j` zeroes a seeded
/// pseudo-random fraction `p` of `θ` and rescales survivors by `1/(1−p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    config: ToyPolicyConfig,
    /// Row-major `features × vocab`.
    theta: Vec<f64>,
    mask_seed: u64,
    reference: bool,
}

impl ToyPolicy {
    /// Parameters drawn from `N(0, init_scale²)` with `seed`; masks are
    /// seeded from the same value.
    pub fn new(config: ToyPolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.num_features() * config.vocab_size;
        let theta = (0..n)
            .map(|_| config.init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self {
            config,
            theta,
            mask_seed: seed,
            reference: false,
        })
    }

    pub fn from_parameters(config: ToyPolicyConfig, theta: Vec<f64>, mask_seed: u64) -> Result<Self> {
        config.validate()?;
        crate::error::check_dim(config.num_features() * config.vocab_size, theta.len())?;
        Ok(Self {
            config,
            theta,
            mask_seed,
            reference: false,
        })
    }

    /// Frozen copy with a single deterministic (dropout-free) mask.
    pub fn as_reference(&self) -> Self {
        Self {
            reference: true,
            ..self.clone()
        }
    }

    /// Same parameters with a different dropout fraction.
    pub fn with_dropout(&self, dropout: f64) -> Result<Self> {
        let config = ToyPolicyConfig { dropout, ..self.config };
        config.validate()?;
        Ok(Self { config, ..self.clone() })
    }

    pub fn config(&self) -> &ToyPolicyConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[f64] {
        &self.theta
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn num_parameters(&self) -> usize {
        self.theta.len()
    }

    /// Index of `θ[feature, token]`.
    pub fn param_index(&self, feature: usize, token: Token) -> usize {
        feature * self.config.vocab_size + token as usize
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(t) => Err(Error::invalid(format!("token {t} outside the vocabulary"))),
            None => Ok(()),
        }
    }

    /// Active features `(index, value)` for the next token after `prefix`.
    fn features(&self, prompt: &[Token], prefix: &[Token]) -> Vec<(usize, f64)> {
        let v = self.config.vocab_size;
        let mut out = Vec::with_capacity(3 + prompt.len());
        out.push((0, 1.0));
        let mut counts = vec![0.0; v];
        for &t in prompt {
            counts[t as usize] += 1.0;
        }
        out.extend(counts.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(t, c)| (1 + t, *c)));
        let prev = prefix.last().map_or(v, |&t| t as usize);
        out.push((1 + v + prev, 1.0));
        let pos = prefix.len().min(self.config.max_len - 1);
        out.push((1 + 2 * v + 1 + pos, 1.0));
        out
    }

    /// Mask multiplier for parameter `idx`: 0 if dropped, `1/(1−p)` if kept.
    fn mask_scale(&self, mask: usize, idx: usize) -> f64 {
        let p = self.config.dropout;
        if p == 0.0 {
            return 1.0;
        }
        let h = splitmix64(self.mask_seed ^ splitmix64((mask as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ idx as u64));
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        if u < p {
            0.0
        } else {
            1.0 / (1.0 - p)
        }
    }

    fn logits(&self, prompt: &[Token], prefix: &[Token], mask: Option<usize>) -> Vec<f64> {
        let v = self.config.vocab_size;
        let mut z = vec![0.0; v];
        for (f, x) in self.features(prompt, prefix) {
            let row = &self.theta[f * v..(f + 1) * v];
            match mask {
                None => z.iter_mut().zip(row).for_each(|(zt, th)| *zt += x * th),
                Some(j) => {
                    for (t, (zt, th)) in z.iter_mut().zip(row).enumerate() {
                        *zt += x * th * self.mask_scale(j, f * v + t);
                    }
                }
            }
        }
        z
    }

    /// Log-softmax of the dropout-free forward pass.
    pub fn deterministic_log_probs(&self, prompt: &[Token], prefix: &[Token]) -> Vec<f64> {
        log_softmax(&self.logits(prompt, prefix, None))
    }

    /// `log π(completion | prompt)` under the dropout-free forward pass.
    pub fn log_prob(&self, prompt: &[Token], completion: &[Token]) -> f64 {
        (0..completion.len())
            .map(|i| self.deterministic_log_probs(prompt, &completion[..i])[completion[i] as usize])
            .sum()
    }

    /// Gradient of [`log_prob`](Self::log_prob) with respect to `θ`, added
    /// into `grad` after scaling by `scale`.
    fn accumulate_log_prob_grad(&self, prompt: &[Token], completion: &[Token], scale: f64, grad: &mut [f64]) {
        let v = self.config.vocab_size;
        for i in 0..completion.len() {
            let prefix = &completion[..i];
            let lp = self.deterministic_log_probs(prompt, prefix);
            let target = completion[i] as usize;
            for (f, x) in self.features(prompt, prefix) {
                let row = &mut grad[f * v..(f + 1) * v];
                for (t, g) in row.iter_mut().enumerate() {
                    let indicator = if t == target { 1.0 } else { 0.0 };
                    *g += scale * x * (indicator - lp[t].exp());
                }
            }
        }
    }
}

impl PolicyEnsemble for ToyPolicy {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn num_masks(&self) -> usize {
        if self.reference {
            1
        } else {
            self.config.num_masks
        }
    }

    fn is_reference(&self) -> bool {
        self.reference
    }

    fn end_token(&self) -> Option<Token> {
        self.config.end_token
    }

    fn log_probs(&self, prompt: &[Token], prefix: &[Token], mask: usize) -> Vec<f64> {
        let mask = (!self.reference && self.config.dropout > 0.0).then_some(mask);
        log_softmax(&self.logits(prompt, prefix, mask))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + z.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// One labeled comparison `(x, a, a′, w)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DpoExample {
    pub prompt: Vec<Token>,
    pub action: Vec<Token>,
    pub comparator: Vec<Token>,
    /// `true` when `action` is preferred.
    pub outcome: bool,
}

impl DpoExample {
    fn sign(&self) -> f64 {
        if self.outcome {
            1.0
        } else {
            -1.0
        }
    }
}

fn check_batch(policy: &ToyPolicy, reference: &ToyPolicy, batch: &[DpoExample], gamma: f64) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("DPO batch is empty"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma must be positive"));
    }
    if policy.config.vocab_size != reference.config.vocab_size {
        return Err(Error::invalid("policy and reference vocabularies differ"));
    }
    for ex in batch {
        policy.check_tokens(&ex.prompt)?;
        policy.check_tokens(&ex.action)?;
        policy.check_tokens(&ex.comparator)?;
    }
    Ok(())
}

/// Per-example logistic argument
/// `γ(2w−1)[(log π_θ(a) − log π_ref(a)) − (log π_θ(a′) − log π_ref(a′))]`.
fn dpo_margin(policy: &ToyPolicy, reference: &ToyPolicy, ex: &DpoExample, gamma: f64) -> f64 {
    let ratio = |c: &[Token]| policy.log_prob(&ex.prompt, c) - reference.log_prob(&ex.prompt, c);
    gamma * ex.sign() * (ratio(&ex.action) - ratio(&ex.comparator))
}

/// Mean `−log ρ(u)` over the batch, with `ρ` the unit logistic.
pub fn dpo_loss(policy: &ToyPolicy, reference: &ToyPolicy, batch: &[DpoExample], gamma: f64) -> Result<f64> {
    check_batch(policy, reference, batch, gamma)?;
    let total: f64 = batch
        .iter()
        .map(|ex| neg_log_logistic(dpo_margin(policy, reference, ex, gamma)))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Analytic gradient of [`dpo_loss`] with respect to the policy parameters.
pub fn dpo_gradient(policy: &ToyPolicy, reference: &ToyPolicy, batch: &[DpoExample], gamma: f64) -> Result<Vec<f64>> {
    check_batch(policy, reference, batch, gamma)?;
    let mut grad = vec![0.0; policy.num_parameters()];
    let n = batch.len() as f64;
    for ex in batch {
        let u = dpo_margin(policy, reference, ex, gamma);
        // d(−log ρ(u))/du = −ρ(−u)
        let coeff = -logistic(-u) * gamma * ex.sign() / n;
        policy.accumulate_log_prob_grad(&ex.prompt, &ex.action, coeff, &mut grad);
        policy.accumulate_log_prob_grad(&ex.prompt, &ex.comparator, -coeff, &mut grad);
    }
    Ok(grad)
}

/// One gradient-descent step on [`dpo_loss`].
pub fn dpo_step(policy: &ToyPolicy, reference: &ToyPolicy, batch: &[DpoExample], gamma: f64, learning_rate: f64) -> Result<ToyPolicy> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(Error::invalid("learning rate must be non-negative"));
    }
    let grad = dpo_gradient(policy, reference, batch, gamma)?;
    let mut next = policy.clone();
    for (th, g) in next.theta.iter_mut().zip(&grad) {
        *th -= learning_rate * g;
    }
    Ok(next)
}
