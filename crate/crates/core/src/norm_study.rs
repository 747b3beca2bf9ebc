//! Empirical RKHS norms of sampled rewards and their Borda functions.
//!
//! A function's norm is estimated from its values on uniform sample points:
//! solve `(K + εI) α = f` and report `√(αᵀ K α)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{BordaQuadrature, Environment, LinkFunction};
use crate::error::{check_dim, Error, Result};
use crate::kernels::{KernelSpec, RewardSampler};
use crate::linalg::{dot, CholeskyFactor};

/// Cholesky factor of a regularized Gram matrix on a fixed point set,
/// reusable across many functions.
#[derive(Debug, Clone)]
pub struct RkhsNormEstimator {
    points: Vec<Vec<f64>>,
    factor: CholeskyFactor,
    jitter: f64,
}

impl RkhsNormEstimator {
    /// Factor `K + jitter·I`, escalating through the shared jitter ladder
    /// if needed.
    pub fn new(kernel: &KernelSpec, points: Vec<Vec<f64>>, jitter: f64) -> Result<Self> {
        kernel.validate()?;
        if points.len() < 2 {
            return Err(Error::invalid("norm estimation needs at least two points"));
        }
        if !(jitter >= 0.0) {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        let n = points.len();
        let gram = kernel.gram(&points);
        let (factor, jitter) = CholeskyFactor::factor_with_escalation(&gram, n, jitter)?;
        Ok(Self { points, factor, jitter })
    }

    /// `n` points drawn uniformly from the unit cube of dimension `dim`.
    pub fn uniform<R: Rng + ?Sized>(kernel: &KernelSpec, dim: usize, n: usize, jitter: f64, rng: &mut R) -> Result<Self> {
        let points = (0..n).map(|_| (0..dim).map(|_| rng.random()).collect()).collect();
        Self::new(kernel, points, jitter)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Jitter actually used by the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Norm estimate from function values at [`points`](Self::points).
    pub fn estimate(&self, values: &[f64]) -> Result<f64> {
        check_dim(self.points.len(), values.len())?;
        // With L Lᵀ = K + εI, y = L⁻¹f and α = L⁻ᵀy:
        // αᵀKα = yᵀy − ε αᵀα.
        let y = self.factor.solve_lower(values);
        let alpha = self.factor.solve_upper(&y);
        let q = dot(&y, &y) - self.jitter * dot(&alpha, &alpha);
        if !q.is_finite() {
            return Err(Error::Oracle("non-finite norm estimate".into()));
        }
        Ok(q.max(0.0).sqrt())
    }
}

/// Estimate `‖f‖` in the RKHS of `kernel` from `num_points` uniform samples
/// of the `dim`-dimensional unit cube.
pub fn estimate_rkhs_norm<F, R>(f: F, kernel: &KernelSpec, dim: usize, num_points: usize, jitter: f64, rng: &mut R) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let est = RkhsNormEstimator::uniform(kernel, dim, num_points, jitter, rng)?;
    let values: Vec<f64> = est.points().iter().map(|p| f(p)).collect();
    est.estimate(&values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormStudyConfig {
    pub num_functions: usize,
    pub num_points: usize,
    pub quadrature_nodes: usize,
    pub jitter: f64,
    pub sampler: RewardSampler,
    pub link: LinkFunction,
    /// Kernel for the norm; defaults to the squared-exponential kernel with
    /// the sampler's lengthscale.
    pub norm_kernel: Option<KernelSpec>,
}

impl Default for NormStudyConfig {
    fn default() -> Self {
        Self {
            num_functions: 1000,
            num_points: 1000,
            quadrature_nodes: 1024,
            jitter: 1e-8,
            sampler: RewardSampler::default(),
            link: LinkFunction::logistic(),
            norm_kernel: None,
        }
    }
}

impl NormStudyConfig {
    pub fn kernel(&self) -> KernelSpec {
        self.norm_kernel
            .unwrap_or_else(|| KernelSpec::squared_exponential(self.sampler.lengthscale))
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_functions == 0 {
            return Err(Error::invalid("norm study needs at least one function"));
        }
        if self.num_points < 2 {
            return Err(Error::invalid("norm study needs at least two points"));
        }
        if self.quadrature_nodes < 2 {
            return Err(Error::invalid("norm study needs at least two quadrature nodes"));
        }
        self.sampler.validate()?;
        self.link.validate()?;
        self.kernel().validate()
    }
}

/// Norms for one sampled reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionNorms {
    pub index: usize,
    pub reward_seed: u64,
    pub reward_norm: f64,
    pub borda_norm: f64,
}

impl FunctionNorms {
    /// The Borda function has strictly smaller norm; ties are losses.
    pub fn is_win(&self) -> bool {
        self.borda_norm < self.reward_norm
    }

    pub fn margin(&self) -> f64 {
        self.reward_norm - self.borda_norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStudyResult {
    pub context_dim: usize,
    pub action_dim: usize,
    pub num_functions: usize,
    pub wins: usize,
    pub ties: usize,
    pub win_rate: f64,
    /// Mean of `‖r‖ − ‖f_r‖`, positive when the Borda function is smaller.
    pub win_margin: f64,
}

impl NormStudyResult {
    pub fn from_norms(context_dim: usize, action_dim: usize, norms: &[FunctionNorms]) -> Result<Self> {
        if norms.is_empty() {
            return Err(Error::invalid("no functions to summarize"));
        }
        let n = norms.len();
        let wins = norms.iter().filter(|f| f.is_win()).count();
        let ties = norms.iter().filter(|f| f.borda_norm == f.reward_norm).count();
        let win_margin = norms.iter().map(FunctionNorms::margin).sum::<f64>() / n as f64;
        Ok(Self {
            context_dim,
            action_dim,
            num_functions: n,
            wins,
            ties,
            win_rate: wins as f64 / n as f64,
            win_margin,
        })
    }

    pub fn loss_rate(&self) -> f64 {
        1.0 - self.win_rate
    }
}

/// Shared per-cell state: the factored point set and quadrature size.
#[derive(Debug, Clone)]
pub struct NormStudyCell {
    context_dim: usize,
    action_dim: usize,
    estimator: RkhsNormEstimator,
    config: NormStudyConfig,
}

impl NormStudyCell {
    pub fn new<R: Rng + ?Sized>(context_dim: usize, action_dim: usize, config: &NormStudyConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if action_dim == 0 {
            return Err(Error::invalid("norm study needs at least one action dimension"));
        }
        let estimator = RkhsNormEstimator::uniform(
            &config.kernel(),
            context_dim + action_dim,
            config.num_points,
            config.jitter,
            rng,
        )?;
        Ok(Self {
            context_dim,
            action_dim,
            estimator,
            config: config.clone(),
        })
    }

    pub fn estimator(&self) -> &RkhsNormEstimator {
        &self.estimator
    }

    /// Norms of the reward sampled from `reward_seed` and of its Borda
    /// function.
    pub fn evaluate(&self, index: usize, reward_seed: u64) -> Result<FunctionNorms> {
        let env = Environment::sample(
            &self.config.sampler,
            self.context_dim,
            self.action_dim,
            self.config.link,
            reward_seed,
        )?;
        let dc = self.context_dim;
        let points = self.estimator.points();
        let rewards: Vec<f64> = points.iter().map(|p| env.reward(&p[..dc], &p[dc..])).collect();
        let quad = BordaQuadrature::new(&env, self.config.quadrature_nodes)?;
        let pairs: Vec<(&[f64], &[f64])> = points.iter().map(|p| (&p[..dc], &p[dc..])).collect();
        let borda = quad.values(&pairs);
        Ok(FunctionNorms {
            index,
            reward_seed,
            reward_norm: self.estimator.estimate(&rewards)?,
            borda_norm: self.estimator.estimate(&borda)?,
        })
    }
}

/// Run one `(context_dim, action_dim)` cell: draw the point set and one
/// reward seed per function from `rng`, then estimate both norms for every
/// function.
pub fn run_norm_study<R: Rng + ?Sized>(
    context_dim: usize,
    action_dim: usize,
    config: &NormStudyConfig,
    rng: &mut R,
) -> Result<(NormStudyResult, Vec<FunctionNorms>)> {
    let cell = NormStudyCell::new(context_dim, action_dim, config, rng)?;
    let seeds: Vec<u64> = (0..config.num_functions).map(|_| rng.random()).collect();
    let norms = seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| cell.evaluate(i, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((NormStudyResult::from_norms(context_dim, action_dim, &norms)?, norms))
}

/// [`run_norm_study`] seeded with a ChaCha stream.
pub fn run_norm_study_seeded(context_dim: usize, action_dim: usize, config: &NormStudyConfig, seed: u64) -> Result<(NormStudyResult, Vec<FunctionNorms>)> {
    run_norm_study(context_dim, action_dim, config, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn se() -> KernelSpec {
        KernelSpec::squared_exponential(0.3)
    }

    #[test]
    fn zero_function_has_zero_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = estimate_rkhs_norm(|_| 0.0, &se(), 2, 300, 1e-8, &mut rng).unwrap();
        assert_eq!(n, 0.0);
    }

    #[test]
    fn kernel_section_recovers_reproducing_norm() {
        for (dim, z0) in [(1, vec![0.37]), (2, vec![0.4, 0.61])] {
            let k = se();
            let mut rng = ChaCha8Rng::seed_from_u64(dim as u64);
            let n = estimate_rkhs_norm(|z| k.eval(&z0, z), &k, dim, 1000, 1e-8, &mut rng).unwrap();
            let expected = k.diag(&z0).sqrt();
            assert!((n - expected).abs() / expected < 0.02, "dim {dim}: {n}");
        }
    }

    #[test]
    fn norm_is_homogeneous() {
        let k = se();
        let est = RkhsNormEstimator::uniform(&k, 2, 400, 1e-8, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let f: Vec<f64> = est.points().iter().map(|p| (3.0 * p[0]).sin() + p[1] * p[1]).collect();
        let base = est.estimate(&f).unwrap();
        for c in [0.5, 2.0, 7.0] {
            let scaled: Vec<f64> = f.iter().map(|v| c * v).collect();
            let n = est.estimate(&scaled).unwrap();
            assert!((n - c * base).abs() / (c * base) < 1e-6);
        }
    }

    #[test]
    fn norm_ignores_point_order() {
        let k = se();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.random(), rng.random()]).collect();
        let f = |p: &[f64]| (4.0 * p[0]).cos() * p[1];
        let a = RkhsNormEstimator::new(&k, pts.clone(), 1e-6).unwrap();
        let va: Vec<f64> = pts.iter().map(|p| f(p)).collect();
        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.swap(0, 150);
        let b = RkhsNormEstimator::new(&k, shuffled.clone(), 1e-6).unwrap();
        let vb: Vec<f64> = shuffled.iter().map(|p| f(p)).collect();
        let (na, nb) = (a.estimate(&va).unwrap(), b.estimate(&vb).unwrap());
        assert!((na - nb).abs() / na < 1e-6);
    }

    #[test]
    fn quadratic_form_matches_dense_evaluation() {
        let k = se();
        let est = RkhsNormEstimator::uniform(&k, 1, 60, 1e-6, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let f: Vec<f64> = est.points().iter().map(|p| (5.0 * p[0]).sin()).collect();
        let n = est.points().len();
        let mut gram = k.gram(est.points());
        let plain = gram.clone();
        for i in 0..n {
            gram[i * n + i] += est.jitter();
        }
        let m = nalgebra::DMatrix::from_row_slice(n, n, &gram);
        let alpha = m.lu().solve(&nalgebra::DVector::from_column_slice(&f)).unwrap();
        let kmat = nalgebra::DMatrix::from_row_slice(n, n, &plain);
        let q = (alpha.transpose() * kmat * &alpha)[(0, 0)];
        let got = est.estimate(&f).unwrap();
        assert!((got - q.sqrt()).abs() / got < 1e-6);
    }

    #[test]
    fn invalid_inputs() {
        assert!(RkhsNormEstimator::new(&se(), vec![vec![0.5]], 1e-8).is_err());
        let cfg = NormStudyConfig {
            num_functions: 0,
            ..NormStudyConfig::default()
        };
        assert!(run_norm_study_seeded(1, 1, &cfg, 0).is_err());
        let est = RkhsNormEstimator::uniform(&se(), 1, 10, 1e-8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(est.estimate(&[1.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    fn small(num_functions: usize) -> NormStudyConfig {
        NormStudyConfig {
            num_functions,
            num_points: 400,
            quadrature_nodes: 256,
            ..NormStudyConfig::default()
        }
    }

    #[test]
    fn summary_counts_are_consistent() {
        let (res, norms) = run_norm_study_seeded(1, 1, &small(12), 7).unwrap();
        assert_eq!(res.num_functions, 12);
        assert_eq!(norms.len(), 12);
        let losses = norms.iter().filter(|f| !f.is_win()).count();
        assert_eq!(res.wins + losses, 12);
        assert!((res.win_rate + res.loss_rate() - 1.0).abs() < 1e-15);
        assert_eq!(NormStudyResult::from_norms(1, 1, &norms).unwrap(), res);
        assert!(norms.iter().all(|f| f.reward_norm >= 0.0 && f.borda_norm >= 0.0));
        let (single, _) = run_norm_study_seeded(1, 1, &small(1), 8).unwrap();
        assert!(single.win_rate == 0.0 || single.win_rate == 1.0);
    }

    #[test]
    fn runs_reproduce_per_seed() {
        let a = run_norm_study_seeded(0, 1, &small(3), 9).unwrap();
        let b = run_norm_study_seeded(0, 1, &small(3), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn win_rate_grows_with_dimension() {
        for seed in 0..5 {
            let (low, _) = run_norm_study_seeded(1, 1, &small(10), 100 + seed).unwrap();
            let (high, _) = run_norm_study_seeded(3, 3, &small(10), 200 + seed).unwrap();
            assert!(low.win_rate < high.win_rate, "seed {seed}: {} vs {}", low.win_rate, high.win_rate);
        }
    }
}
