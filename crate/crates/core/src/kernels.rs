//! Kernels on joint context-action points and random Fourier feature
//! rewards.
//!
//! A joint point is the concatenation `[x, a]` of a context and an action,
//! both living in the unit cube. Ground-truth rewards are random linear
//! combinations of cosine features whose frequencies are drawn from the
//! spectral density of a squared-exponential kernel.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::qmc::kronecker_points;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    SquaredExponential,
    #[serde(rename = "matern-5/2", alias = "matern52")]
    Matern52,
    #[serde(rename = "matern-3/2", alias = "matern32")]
    Matern32,
    Linear,
}

impl KernelFamily {
    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::Linear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub signal_variance: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64, signal_variance: f64) -> Result<Self> {
        let spec = Self {
            family,
            lengthscale,
            signal_variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn squared_exponential(lengthscale: f64) -> Self {
        Self {
            family: KernelFamily::SquaredExponential,
            lengthscale,
            signal_variance: 1.0,
        }
    }

    pub fn matern52(lengthscale: f64) -> Self {
        Self {
            family: KernelFamily::Matern52,
            lengthscale,
            signal_variance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::invalid(format!("lengthscale must be positive, got {}", self.lengthscale)));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::invalid(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        Ok(())
    }

    /// Kernel value; panics in debug builds on mismatched lengths. Use
    /// [`eval_kernel`] for checked evaluation.
    #[inline]
    pub fn eval(&self, z1: &[f64], z2: &[f64]) -> f64 {
        debug_assert_eq!(z1.len(), z2.len());
        let v = self.signal_variance;
        let l = self.lengthscale;
        match self.family {
            KernelFamily::Linear => v * z1.iter().zip(z2).map(|(a, b)| a * b).sum::<f64>() / (l * l),
            family => {
                let d2: f64 = z1.iter().zip(z2).map(|(a, b)| (a - b) * (a - b)).sum();
                stationary(family, v, l, d2)
            }
        }
    }

    /// `κ(z, z)`.
    #[inline]
    pub fn diag(&self, z: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Linear => self.eval(z, z),
            _ => self.signal_variance,
        }
    }

    /// Dense row-major Gram matrix over `points`.
    pub fn gram(&self, points: &[Vec<f64>]) -> Vec<f64> {
        let n = points.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(&points[i], &points[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }
}

#[inline]
fn stationary(family: KernelFamily, variance: f64, lengthscale: f64, dist2: f64) -> f64 {
    match family {
        KernelFamily::SquaredExponential => variance * (-0.5 * dist2 / (lengthscale * lengthscale)).exp(),
        KernelFamily::Matern52 => {
            let s = 5f64.sqrt() * dist2.sqrt() / lengthscale;
            variance * (1.0 + s + s * s / 3.0) * (-s).exp()
        }
        KernelFamily::Matern32 => {
            let s = 3f64.sqrt() * dist2.sqrt() / lengthscale;
            variance * (1.0 + s) * (-s).exp()
        }
        KernelFamily::Linear => unreachable!("linear kernel is not stationary"),
    }
}

/// Checked kernel evaluation.
pub fn eval_kernel(spec: &KernelSpec, z1: &[f64], z2: &[f64]) -> Result<f64> {
    check_dim(z1.len(), z2.len())?;
    Ok(spec.eval(z1, z2))
}

/// A reward function `r(z) = Σ_j w_j cos(ω_j · z + b_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffBasis {
    pub context_dim: usize,
    pub action_dim: usize,
    /// Row-major `num_features × input_dim`.
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RffBasis {
    pub fn new(
        context_dim: usize,
        action_dim: usize,
        frequencies: Vec<f64>,
        phases: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let basis = Self {
            context_dim,
            action_dim,
            frequencies,
            phases,
            weights,
        };
        basis.validate()?;
        Ok(basis)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.weights.len();
        if f == 0 {
            return Err(Error::invalid("basis needs at least one feature"));
        }
        check_dim(f, self.phases.len())?;
        check_dim(f * self.input_dim(), self.frequencies.len())
    }

    pub fn input_dim(&self) -> usize {
        self.context_dim + self.action_dim
    }

    pub fn num_features(&self) -> usize {
        self.weights.len()
    }

    pub fn frequency(&self, j: usize) -> &[f64] {
        let d = self.input_dim();
        &self.frequencies[j * d..(j + 1) * d]
    }

    /// `r(x, a)` without the concatenation; unchecked lengths.
    #[inline]
    pub fn eval_split(&self, x: &[f64], a: &[f64]) -> f64 {
        let dc = self.context_dim;
        let mut total = 0.0;
        for j in 0..self.weights.len() {
            let w = self.frequency(j);
            let mut arg = self.phases[j];
            for (wi, xi) in w[..dc].iter().zip(x) {
                arg += wi * xi;
            }
            for (wi, ai) in w[dc..].iter().zip(a) {
                arg += wi * ai;
            }
            total += self.weights[j] * arg.cos();
        }
        total
    }

    #[inline]
    pub fn eval_joint(&self, z: &[f64]) -> f64 {
        let (x, a) = z.split_at(self.context_dim);
        self.eval_split(x, a)
    }
}

/// Checked reward evaluation `r(x, a)`.
pub fn eval_reward(basis: &RffBasis, x: &[f64], a: &[f64]) -> Result<f64> {
    check_dim(basis.context_dim, x.len())?;
    check_dim(basis.action_dim, a.len())?;
    Ok(basis.eval_split(x, a))
}

/// Settings for drawing ground-truth rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSampler {
    /// Lengthscale of the squared-exponential kernel whose spectral density
    /// the frequencies are drawn from.
    pub lengthscale: f64,
    pub num_features: usize,
    /// Weights are rescaled so the reward has this standard deviation over
    /// the probe set. Zero disables rescaling.
    pub target_std: f64,
    pub probe_points: usize,
}

impl Default for RewardSampler {
    fn default() -> Self {
        Self {
            lengthscale: 0.3,
            num_features: 128,
            target_std: 1.0,
            probe_points: 1024,
        }
    }
}

impl RewardSampler {
    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0) {
            return Err(Error::invalid("reward lengthscale must be positive"));
        }
        if self.num_features == 0 {
            return Err(Error::invalid("reward needs at least one feature"));
        }
        if !(self.target_std >= 0.0) {
            return Err(Error::invalid("target std must be non-negative"));
        }
        if self.target_std > 0.0 && self.probe_points < 2 {
            return Err(Error::invalid("rescaling needs at least two probe points"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, context_dim: usize, action_dim: usize, rng: &mut R) -> Result<RffBasis> {
        self.validate()?;
        let d = context_dim + action_dim;
        let nf = self.num_features;
        let inv_l = 1.0 / self.lengthscale;
        let frequencies: Vec<f64> = (0..nf * d)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * inv_l)
            .collect();
        let phases: Vec<f64> = (0..nf).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        let weights: Vec<f64> = (0..nf).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut basis = RffBasis::new(context_dim, action_dim, frequencies, phases, weights)?;
        if self.target_std > 0.0 {
            let std = probe_std(&basis, self.probe_points);
            if std > 0.0 {
                let scale = self.target_std / std;
                basis.weights.iter_mut().for_each(|w| *w *= scale);
            }
        }
        Ok(basis)
    }
}

/// Population standard deviation of `r` over the first `n` Kronecker points.
pub fn probe_std(basis: &RffBasis, n: usize) -> f64 {
    let values: Vec<f64> = kronecker_points(n, basis.input_dim())
        .iter()
        .map(|z| basis.eval_joint(z))
        .collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Draw a reward with the default sampler settings and `num_features`
/// features, reproducibly from `seed`.
pub fn sample_reward(context_dim: usize, action_dim: usize, num_features: usize, seed: u64) -> Result<RffBasis> {
    let sampler = RewardSampler {
        num_features,
        ..RewardSampler::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sampler.sample(context_dim, action_dim, &mut rng)
}
