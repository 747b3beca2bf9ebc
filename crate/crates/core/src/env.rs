//! Ground-truth preference environment: link functions, duels, the
//! contextual Borda function, and policy suboptimality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{RewardSampler, RffBasis};
use crate::qmc::kronecker_points;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkFamily {
    /// Bradley-Terry-Luce.
    Logistic,
    /// Thurstone.
    GaussianCdf,
}

/// Monotone map from reward gaps to win probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkFunction {
    pub family: LinkFamily,
    pub scale: f64,
}

impl Default for LinkFunction {
    fn default() -> Self {
        Self::logistic()
    }
}

impl LinkFunction {
    pub fn logistic() -> Self {
        Self {
            family: LinkFamily::Logistic,
            scale: 1.0,
        }
    }

    pub fn gaussian_cdf() -> Self {
        Self {
            family: LinkFamily::GaussianCdf,
            scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale > 0.0 && self.scale.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("link scale must be positive, got {}", self.scale)))
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        let s = u / self.scale;
        match self.family {
            LinkFamily::Logistic => logistic(s),
            LinkFamily::GaussianCdf => 0.5 * libm::erfc(-s / std::f64::consts::SQRT_2),
        }
    }
}

/// Numerically stable `1 / (1 + e^{-u})`.
#[inline]
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `−log ρ(u)` for the unit logistic, stable for large `|u|`.
#[inline]
pub fn neg_log_logistic(u: f64) -> f64 {
    if u >= 0.0 {
        (-u).exp().ln_1p()
    } else {
        -u + u.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub reward: RffBasis,
    pub link: LinkFunction,
    pub seed: u64,
}

impl Environment {
    pub fn new(reward: RffBasis, link: LinkFunction, seed: u64) -> Result<Self> {
        reward.validate()?;
        link.validate()?;
        Ok(Self { reward, link, seed })
    }

    /// Environment whose reward is drawn from `sampler` with `seed`.
    pub fn sample(
        sampler: &RewardSampler,
        context_dim: usize,
        action_dim: usize,
        link: LinkFunction,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reward = sampler.sample(context_dim, action_dim, &mut rng)?;
        Self::new(reward, link, seed)
    }

    pub fn context_dim(&self) -> usize {
        self.reward.context_dim
    }

    pub fn action_dim(&self) -> usize {
        self.reward.action_dim
    }

    pub fn reward(&self, x: &[f64], a: &[f64]) -> f64 {
        self.reward.eval_split(x, a)
    }

    fn check(&self, x: &[f64], a: &[f64]) -> Result<()> {
        check_dim(self.context_dim(), x.len())?;
        check_dim(self.action_dim(), a.len())
    }

    /// `f(x, a, a′) = ρ(r(x, a) − r(x, a′))`.
    pub fn preference_probability(&self, x: &[f64], a: &[f64], comparator: &[f64]) -> Result<f64> {
        self.check(x, a)?;
        check_dim(self.action_dim(), comparator.len())?;
        if a == comparator {
            return Ok(0.5);
        }
        Ok(self.link.eval(self.reward(x, a) - self.reward(x, comparator)))
    }
}

/// One Bernoulli preference draw: `true` when `a` beats `comparator`.
pub fn duel<R: Rng + ?Sized>(env: &Environment, x: &[f64], a: &[f64], comparator: &[f64], rng: &mut R) -> Result<bool> {
    let p = env.preference_probability(x, a, comparator)?;
    Ok(rng.random::<f64>() < p)
}

/// Contextual Borda value `f_r(x, a) = E_{a′∼U}[f(x, a, a′)]`, by
/// quasi-Monte-Carlo quadrature over the action cube.
pub fn borda_oracle(env: &Environment, x: &[f64], a: &[f64], quadrature_points: usize) -> Result<f64> {
    env.check(x, a)?;
    let quad = BordaQuadrature::new(env, quadrature_points)?;
    Ok(quad.value(x, a))
}

/// Precomputed quadrature tables for repeated Borda evaluations against
/// one environment.
///
/// Each comparator reward is `Σ_j w_j cos(u_j + v_kj)` with `u_j` depending
/// only on the context and `v_kj` only on node `k`, so a batch of contexts
/// reduces to two matrix products against cached `cos v` and `sin v`
/// tables.
#[derive(Debug, Clone)]
pub struct BordaQuadrature<'a> {
    env: &'a Environment,
    nodes: usize,
    /// Row-major `nodes × features`.
    cos_v: Vec<f64>,
    sin_v: Vec<f64>,
}

impl<'a> BordaQuadrature<'a> {
    pub fn new(env: &'a Environment, quadrature_points: usize) -> Result<Self> {
        Self::with_nodes(env, kronecker_points(quadrature_points, env.action_dim()))
    }

    /// Use caller-provided comparator nodes.
    pub fn with_nodes(env: &'a Environment, nodes: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("Borda quadrature needs at least two nodes"));
        }
        let basis = &env.reward;
        let dc = basis.context_dim;
        let nf = basis.num_features();
        let mut cos_v = Vec::with_capacity(nodes.len() * nf);
        let mut sin_v = Vec::with_capacity(nodes.len() * nf);
        for node in &nodes {
            check_dim(env.action_dim(), node.len())?;
            for j in 0..nf {
                let v: f64 = basis.frequency(j)[dc..].iter().zip(node).map(|(w, a)| w * a).sum();
                cos_v.push(v.cos());
                sin_v.push(v.sin());
            }
        }
        Ok(Self {
            env,
            nodes: nodes.len(),
            cos_v,
            sin_v,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes
    }

    /// `(w_j cos u_j, −w_j sin u_j)` for context `x`.
    fn context_coefficients(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let basis = &self.env.reward;
        let dc = basis.context_dim;
        let nf = basis.num_features();
        let mut p = Vec::with_capacity(nf);
        let mut q = Vec::with_capacity(nf);
        for j in 0..nf {
            let u = basis.phases[j]
                + basis.frequency(j)[..dc]
                    .iter()
                    .zip(x)
                    .map(|(w, xi)| w * xi)
                    .sum::<f64>();
            p.push(basis.weights[j] * u.cos());
            q.push(-basis.weights[j] * u.sin());
        }
        (p, q)
    }

    /// Rewards `r(x_i, a′_k)` for every context in `contexts` and every node,
    /// row-major `contexts × nodes`.
    pub fn comparator_rewards(&self, contexts: &[&[f64]]) -> Vec<f64> {
        let nf = self.env.reward.num_features();
        let m = contexts.len();
        let mut p = Vec::with_capacity(m * nf);
        let mut q = Vec::with_capacity(m * nf);
        for x in contexts {
            let (pi, qi) = self.context_coefficients(x);
            p.extend(pi);
            q.extend(qi);
        }
        let n = self.nodes;
        let mut out = vec![0.0; m * n];
        if m == 0 {
            return out;
        }
        // out = P · cos_vᵀ + Q · sin_vᵀ
        unsafe {
            matrixmultiply::dgemm(
                m,
                nf,
                n,
                1.0,
                p.as_ptr(),
                nf as isize,
                1,
                self.cos_v.as_ptr(),
                1,
                nf as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
            matrixmultiply::dgemm(
                m,
                nf,
                n,
                1.0,
                q.as_ptr(),
                nf as isize,
                1,
                self.sin_v.as_ptr(),
                1,
                nf as isize,
                1.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        out
    }

    fn average_link(&self, reward: f64, comparators: &[f64]) -> f64 {
        let link = self.env.link;
        comparators.iter().map(|rc| link.eval(reward - rc)).sum::<f64>() / comparators.len() as f64
    }

    pub fn value(&self, x: &[f64], a: &[f64]) -> f64 {
        let rc = self.comparator_rewards(&[x]);
        self.average_link(self.env.reward(x, a), &rc)
    }

    /// Borda values at each `(x, a)` pair.
    pub fn values(&self, pairs: &[(&[f64], &[f64])]) -> Vec<f64> {
        const CHUNK: usize = 256;
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(CHUNK) {
            let contexts: Vec<&[f64]> = chunk.iter().map(|(x, _)| *x).collect();
            let rc = self.comparator_rewards(&contexts);
            for (i, (x, a)) in chunk.iter().enumerate() {
                let row = &rc[i * self.nodes..(i + 1) * self.nodes];
                out.push(self.average_link(self.env.reward(x, a), row));
            }
        }
        out
    }

    /// Borda values over `contexts × actions`, row-major by context.
    pub fn grid_values(&self, contexts: &[Vec<f64>], actions: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(contexts.len() * actions.len());
        for x in contexts {
            let rc = self.comparator_rewards(&[x.as_slice()]);
            for a in actions {
                out.push(self.average_link(self.env.reward(x, a), &rc));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suboptimality {
    /// Worst context.
    pub max: f64,
    pub median: f64,
}

/// Per-context gap `max_{a∈grid} r(x, a) − r(x, π(x))`, summarized as its
/// maximum and median over the context grid.
pub fn suboptimality<P>(env: &Environment, policy: P, context_grid: &[Vec<f64>], action_grid: &[Vec<f64>]) -> Result<Suboptimality>
where
    P: Fn(&[f64]) -> Vec<f64>,
{
    if context_grid.is_empty() || action_grid.is_empty() {
        return Err(Error::invalid("suboptimality needs non-empty grids"));
    }
    let mut gaps = Vec::with_capacity(context_grid.len());
    for x in context_grid {
        env.check(x, &action_grid[0])?;
        let best = action_grid
            .iter()
            .map(|a| env.reward(x, a))
            .fold(f64::NEG_INFINITY, f64::max);
        let chosen = policy(x);
        check_dim(env.action_dim(), chosen.len())?;
        gaps.push(best - env.reward(x, &chosen));
    }
    Ok(summarize(&mut gaps))
}

fn summarize(gaps: &mut [f64]) -> Suboptimality {
    let max = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    let median = if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    };
    Suboptimality { max, median }
}

/// Rewards on a fixed `contexts × actions` grid, for evaluating many
/// grid policies against the same environment.
#[derive(Debug, Clone)]
pub struct RewardTable {
    num_actions: usize,
    values: Vec<f64>,
    best: Vec<f64>,
}

impl RewardTable {
    pub fn new(env: &Environment, context_grid: &[Vec<f64>], action_grid: &[Vec<f64>]) -> Result<Self> {
        if context_grid.is_empty() || action_grid.is_empty() {
            return Err(Error::invalid("reward table needs non-empty grids"));
        }
        let mut values = Vec::with_capacity(context_grid.len() * action_grid.len());
        for x in context_grid {
            for a in action_grid {
                env.check(x, a)?;
                values.push(env.reward(x, a));
            }
        }
        let best = values
            .chunks(action_grid.len())
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Ok(Self {
            num_actions: action_grid.len(),
            values,
            best,
        })
    }

    pub fn reward(&self, context: usize, action: usize) -> f64 {
        self.values[context * self.num_actions + action]
    }

    /// Suboptimality of the grid policy choosing action index
    /// `choices[c]` at context index `c`.
    pub fn evaluate(&self, choices: &[usize]) -> Result<Suboptimality> {
        check_dim(self.best.len(), choices.len())?;
        let mut gaps: Vec<f64> = choices
            .iter()
            .enumerate()
            .map(|(c, &a)| self.best[c] - self.reward(c, a))
            .collect();
        Ok(summarize(&mut gaps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::sample_reward;
    use proptest::prelude::*;
    use rand::Rng;

    fn constant_env(c: f64) -> Environment {
        let reward = RffBasis::new(1, 1, vec![0.0, 0.0], vec![0.0], vec![c]).unwrap();
        Environment::new(reward, LinkFunction::logistic(), 0).unwrap()
    }

    fn sampled_env(seed: u64) -> Environment {
        Environment::new(sample_reward(1, 1, 128, seed).unwrap(), LinkFunction::logistic(), seed).unwrap()
    }

    #[test]
    fn link_midpoint() {
        assert_eq!(LinkFunction::logistic().eval(0.0), 0.5);
        assert_eq!(LinkFunction::gaussian_cdf().eval(0.0), 0.5);
        assert!(LinkFunction::gaussian_cdf().eval(1.0) > 0.84);
        let bad = LinkFunction {
            family: LinkFamily::Logistic,
            scale: 0.0,
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn link_is_antisymmetric_and_increasing(u in -40.0f64..40.0, du in 1e-3f64..1.0, scale in 0.1f64..5.0) {
            for family in [LinkFamily::Logistic, LinkFamily::GaussianCdf] {
                let link = LinkFunction { family, scale };
                prop_assert!((link.eval(u) + link.eval(-u) - 1.0).abs() < 1e-12);
                if link.eval(u) < 1.0 && link.eval(u) > 0.0 && u.abs() < 5.0 {
                    prop_assert!(link.eval(u + du) > link.eval(u));
                }
            }
        }
    }

    #[test]
    fn self_duel_is_even() {
        let env = sampled_env(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let wins = (0..10_000)
            .filter(|_| duel(&env, &[0.3], &[0.4], &[0.4], &mut rng).unwrap())
            .count();
        assert!((wins as f64 / 1e4 - 0.5).abs() < 0.02);
        assert_eq!(env.preference_probability(&[0.3], &[0.4], &[0.4]).unwrap(), 0.5);
    }

    #[test]
    fn large_gap_saturates() {
        // r(x, a) = 5 cos(π a) puts a gap of 10 between a = 0 and a = 1.
        let reward = RffBasis::new(1, 1, vec![0.0, std::f64::consts::PI], vec![0.0], vec![5.0]).unwrap();
        let env = Environment::new(reward, LinkFunction::logistic(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let wins = (0..10_000)
            .filter(|_| duel(&env, &[0.5], &[0.0], &[1.0], &mut rng).unwrap())
            .count();
        assert!(wins as f64 / 1e4 > 0.999);
    }

    #[test]
    fn win_rate_tracks_logistic_gap() {
        let env = sampled_env(3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (a, b) in [(0.1, 0.8), (0.5, 0.55), (0.9, 0.2)] {
            let gap = env.reward(&[0.4], &[a]) - env.reward(&[0.4], &[b]);
            let p = 1.0 / (1.0 + (-gap).exp());
            let n = 10_000;
            let wins = (0..n).filter(|_| duel(&env, &[0.4], &[a], &[b], &mut rng).unwrap()).count();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((wins as f64 / n as f64 - p).abs() < 3.0 * se + 1e-9);
        }
    }

    #[test]
    fn constant_reward_has_flat_borda() {
        let env = constant_env(2.5);
        for (x, a) in [(0.1, 0.2), (0.9, 0.7)] {
            assert!((borda_oracle(&env, &[x], &[a], 64).unwrap() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn borda_and_reward_share_maximizers() {
        let actions = crate::qmc::uniform_grid(101, 1);
        for seed in 0..10 {
            let env = sampled_env(100 + seed);
            let quad = BordaQuadrature::new(&env, 1024).unwrap();
            let x = [0.37];
            let borda = quad.grid_values(&[x.to_vec()], &actions);
            let reward: Vec<f64> = actions.iter().map(|a| env.reward(&x, a)).collect();
            let ib = crate::posterior::argmax_first(&borda);
            let ir = crate::posterior::argmax_first(&reward);
            assert_eq!(ib, ir, "seed {seed}");
        }
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let env = sampled_env(5);
        let quad = BordaQuadrature::new(&env, 4096).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, a) = ([0.6], [0.25]);
        let r = env.reward(&x, &a);
        let n = 1_000_000;
        let mc: f64 = (0..n)
            .map(|_| {
                let ap = [rng.random::<f64>()];
                env.link.eval(r - env.reward(&x, &ap))
            })
            .sum::<f64>()
            / n as f64;
        assert!((quad.value(&x, &a) - mc).abs() < 1e-3);
    }

    #[test]
    fn quadrature_ignores_node_order() {
        let env = sampled_env(6);
        let mut nodes = kronecker_points(128, 1);
        let q1 = BordaQuadrature::with_nodes(&env, nodes.clone()).unwrap().value(&[0.2], &[0.3]);
        nodes.reverse();
        nodes.swap(3, 77);
        let q2 = BordaQuadrature::with_nodes(&env, nodes).unwrap().value(&[0.2], &[0.3]);
        assert!((q1 - q2).abs() < 1e-12);
    }

    #[test]
    fn batched_values_match_direct_sum() {
        let env = Environment::new(sample_reward(2, 2, 64, 7).unwrap(), LinkFunction::logistic(), 7).unwrap();
        let nodes = kronecker_points(50, 2);
        let quad = BordaQuadrature::with_nodes(&env, nodes.clone()).unwrap();
        let pts = kronecker_points(300, 4);
        let pairs: Vec<(&[f64], &[f64])> = pts.iter().map(|p| (&p[..2], &p[2..])).collect();
        let fast = quad.values(&pairs);
        for (i, (x, a)) in pairs.iter().enumerate().step_by(17) {
            let direct: f64 = nodes
                .iter()
                .map(|n| env.link.eval(env.reward(x, a) - env.reward(x, n)))
                .sum::<f64>()
                / 50.0;
            assert!((fast[i] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_policy_has_zero_gap() {
        let env = sampled_env(8);
        let cg = crate::qmc::uniform_grid(21, 1);
        let ag = crate::qmc::uniform_grid(101, 1);
        let best = |x: &[f64]| {
            let vals: Vec<f64> = ag.iter().map(|a| env.reward(x, a)).collect();
            ag[crate::posterior::argmax_first(&vals)].clone()
        };
        let s = suboptimality(&env, best, &cg, &ag).unwrap();
        assert_eq!((s.max, s.median), (0.0, 0.0));
        let flat = constant_env(1.0);
        let s = suboptimality(&flat, |_| vec![0.3], &cg, &ag).unwrap();
        assert_eq!((s.max, s.median), (0.0, 0.0));
        assert!(suboptimality(&flat, |_| vec![0.3], &[], &ag).is_err());
    }

    #[test]
    fn random_policy_matches_double_loop() {
        let env = sampled_env(9);
        let cg = crate::qmc::uniform_grid(31, 1);
        let ag = crate::qmc::uniform_grid(41, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let choice: Vec<usize> = (0..cg.len()).map(|_| rng.random_range(0..ag.len())).collect();
        let lookup = |x: &[f64]| {
            let c = cg.iter().position(|g| g.as_slice() == x).unwrap();
            ag[choice[c]].clone()
        };
        let s = suboptimality(&env, lookup, &cg, &ag).unwrap();
        let mut gaps = Vec::new();
        for (c, x) in cg.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for a in &ag {
                best = best.max(env.reward(x, a));
            }
            gaps.push(best - env.reward(x, &ag[choice[c]]));
        }
        gaps.sort_by(f64::total_cmp);
        assert_eq!(s.max, *gaps.last().unwrap());
        assert_eq!(s.median, gaps[gaps.len() / 2]);
        assert!(s.max >= s.median && s.median >= 0.0);
        let table = RewardTable::new(&env, &cg, &ag).unwrap();
        assert_eq!(table.evaluate(&choice).unwrap(), s);
    }
}
