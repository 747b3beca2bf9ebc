//! Kernel ridge regression of binary preference outcomes.
//!
//! The regression input is the joint point `(x, a)`; the comparator action
//! is not part of the input, so the fitted function estimates the contextual
//! Borda value rather than the pairwise preference.
//!
//! With `K` the Gram matrix of the design and `w` the outcomes,
//!
//! ```text
//! μ(z)  = k(z)ᵀ (K + λI)⁻¹ w
//! σ²(z) = κ(z, z) − k(z)ᵀ (K + λI)⁻¹ k(z)
//! ```
//!
//! Both are computed through a lower Cholesky factor `L` of `K + λI`:
//! `μ = (L⁻¹k)·(L⁻¹w)` and `σ² = κ − ‖L⁻¹k‖²`. Because data only ever gets
//! appended, the posterior after the first `n` observations is read off the
//! leading block of `L`, which is what [`PosteriorModel::prefix_path`] and
//! [`GridPosterior`] exploit.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernels::KernelSpec;
use crate::linalg::{dot, CholeskyFactor, JITTER_LADDER};
use crate::qmc::kronecker_points;

/// Probe set size used by [`estimate_info_gain`].
pub const INFO_GAIN_GRID: usize = 256;

/// One interaction `(x, a, a′, w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceObservation {
    pub context: Vec<f64>,
    pub action: Vec<f64>,
    pub comparator: Vec<f64>,
    /// `true` when `action` was preferred over `comparator`.
    pub outcome: bool,
}

impl PreferenceObservation {
    pub fn joint(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.context.len() + self.action.len());
        z.extend_from_slice(&self.context);
        z.extend_from_slice(&self.action);
        z
    }

    pub fn target(&self) -> f64 {
        if self.outcome {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorConfig {
    pub kernel: KernelSpec,
    /// Ridge parameter λ.
    pub regularization: f64,
    /// Sub-Gaussian noise scale η, used for information-gain estimates.
    pub noise_scale: f64,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            kernel: KernelSpec::matern52(0.3),
            regularization: 0.1,
            noise_scale: 0.5,
        }
    }
}

impl PosteriorConfig {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.regularization > 0.0 && self.regularization.is_finite()) {
            return Err(Error::invalid("regularization must be positive"));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise scale must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorModel {
    config: PosteriorConfig,
    context_dim: usize,
    action_dim: usize,
    points: Vec<Vec<f64>>,
    targets: Vec<f64>,
    /// Factor of `K + (λ + jitter) I`.
    factor: CholeskyFactor,
    jitter: f64,
    /// `L⁻¹ w`.
    whitened: Vec<f64>,
    /// Incremented whenever the factor is rebuilt instead of extended.
    epoch: u64,
}

impl PosteriorModel {
    /// The prior: no data, `μ ≡ 0`, `σ² = κ(z, z)`.
    pub fn prior(config: PosteriorConfig, context_dim: usize, action_dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            context_dim,
            action_dim,
            points: Vec::new(),
            targets: Vec::new(),
            factor: CholeskyFactor::empty(),
            jitter: 0.0,
            whitened: Vec::new(),
            epoch: 0,
        })
    }

    pub fn fit(
        config: PosteriorConfig,
        context_dim: usize,
        action_dim: usize,
        data: &[PreferenceObservation],
    ) -> Result<Self> {
        let mut model = Self::prior(config, context_dim, action_dim)?;
        for obs in data {
            model.check_obs(obs)?;
        }
        model.points = data.iter().map(PreferenceObservation::joint).collect();
        model.targets = data.iter().map(PreferenceObservation::target).collect();
        model.refactor(0.0)?;
        Ok(model)
    }

    fn check_obs(&self, obs: &PreferenceObservation) -> Result<()> {
        check_dim(self.context_dim, obs.context.len())?;
        check_dim(self.action_dim, obs.action.len())?;
        check_dim(self.action_dim, obs.comparator.len())
    }

    /// Rebuild the factor from scratch, starting at `min_jitter` and
    /// escalating through the jitter ladder.
    fn refactor(&mut self, min_jitter: f64) -> Result<()> {
        let n = self.points.len();
        let mut gram = self.config.kernel.gram(&self.points);
        for i in 0..n {
            gram[i * n + i] += self.config.regularization;
        }
        let (factor, jitter) = CholeskyFactor::factor_with_escalation(&gram, n, min_jitter)?;
        self.whitened = factor.solve_lower(&self.targets);
        self.factor = factor;
        self.jitter = jitter;
        self.epoch += 1;
        Ok(())
    }

    /// Add one observation in place. Returns `σ²(z)` at the new design point
    /// under the posterior *before* the update.
    pub fn push(&mut self, obs: &PreferenceObservation) -> Result<f64> {
        self.check_obs(obs)?;
        let z = obs.joint();
        let w = obs.target();
        let kernel = self.config.kernel;
        let cross: Vec<f64> = self.points.iter().map(|p| kernel.eval(p, &z)).collect();
        let prior = kernel.diag(&z);
        let shift = self.config.regularization + self.jitter;
        match self.factor.push(&cross, prior + shift) {
            Ok(schur) => {
                let n = self.points.len();
                let row = self.factor.row(n);
                let c = (w - dot(&row[..n], &self.whitened)) / row[n];
                self.whitened.push(c);
                self.points.push(z);
                self.targets.push(w);
                Ok((schur - shift).clamp(0.0, prior))
            }
            Err(_) => {
                let var = self.variance(&z);
                self.points.push(z);
                self.targets.push(w);
                let next = JITTER_LADDER
                    .iter()
                    .copied()
                    .find(|&j| j > self.jitter)
                    .unwrap_or(f64::INFINITY);
                if let Err(e) = self.refactor(next) {
                    self.points.pop();
                    self.targets.pop();
                    return Err(e);
                }
                Ok(var)
            }
        }
    }

    /// A new model with `obs` appended.
    pub fn update(&self, obs: &PreferenceObservation) -> Result<Self> {
        let mut next = self.clone();
        next.push(obs)?;
        Ok(next)
    }

    fn whiten(&self, z: &[f64]) -> Vec<f64> {
        let kernel = self.config.kernel;
        let k: Vec<f64> = self.points.iter().map(|p| kernel.eval(p, z)).collect();
        self.factor.solve_lower(&k)
    }

    fn variance(&self, z: &[f64]) -> f64 {
        let v = self.whiten(z);
        let prior = self.config.kernel.diag(z);
        (prior - dot(&v, &v)).clamp(0.0, prior)
    }

    /// Posterior mean and standard deviation at the joint point `z`.
    pub fn predict(&self, z: &[f64]) -> Result<Prediction> {
        check_dim(self.joint_dim(), z.len())?;
        let v = self.whiten(z);
        let prior = self.config.kernel.diag(z);
        let var = (prior - dot(&v, &v)).clamp(0.0, prior);
        Ok(Prediction {
            mean: dot(&v, &self.whitened),
            stddev: var.sqrt(),
        })
    }

    /// Mean and variance at `z` under every prefix posterior: entry `n` is
    /// the posterior fitted on the first `n` observations.
    pub fn prefix_path(&self, z: &[f64]) -> Result<Vec<(f64, f64)>> {
        check_dim(self.joint_dim(), z.len())?;
        let v = self.whiten(z);
        let prior = self.config.kernel.diag(z);
        let mut out = Vec::with_capacity(v.len() + 1);
        let (mut mean, mut var) = (0.0, prior);
        out.push((mean, var));
        for (vi, ci) in v.iter().zip(&self.whitened) {
            mean += vi * ci;
            var -= vi * vi;
            out.push((mean, var.clamp(0.0, prior)));
        }
        Ok(out)
    }

    pub fn config(&self) -> &PosteriorConfig {
        &self.config
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.config.kernel
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn joint_dim(&self) -> usize {
        self.context_dim + self.action_dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// Extra diagonal jitter on top of λ currently in the factor.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn whitened_targets(&self) -> &[f64] {
        &self.whitened
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

/// Posterior mean and variance tracked on a fixed point set, updated in
/// `O(n)` per point whenever the model grows by one observation.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    points: Vec<Vec<f64>>,
    prior_var: Vec<f64>,
    /// `columns[i][g]` is entry `i` of `L⁻¹ k(z_g)`.
    columns: Vec<Vec<f64>>,
    mean: Vec<f64>,
    var: Vec<f64>,
    epoch: u64,
}

impl GridPosterior {
    pub fn new(model: &PosteriorModel, points: Vec<Vec<f64>>) -> Result<Self> {
        for p in &points {
            check_dim(model.joint_dim(), p.len())?;
        }
        let kernel = model.kernel();
        let prior_var: Vec<f64> = points.iter().map(|p| kernel.diag(p)).collect();
        let mut grid = Self {
            mean: vec![0.0; points.len()],
            var: prior_var.clone(),
            prior_var,
            points,
            columns: Vec::new(),
            epoch: model.epoch(),
        };
        grid.sync(model);
        Ok(grid)
    }

    /// Absorb any observations the model gained since the last sync.
    pub fn sync(&mut self, model: &PosteriorModel) {
        if model.epoch() != self.epoch || model.len() < self.columns.len() {
            self.columns.clear();
            self.mean.iter_mut().for_each(|m| *m = 0.0);
            self.var.copy_from_slice(&self.prior_var);
            self.epoch = model.epoch();
        }
        for i in self.columns.len()..model.len() {
            self.absorb(model, i);
        }
    }

    fn absorb(&mut self, model: &PosteriorModel, i: usize) {
        let row = model.factor().row(i);
        let zi = &model.points()[i];
        let kernel = model.kernel();
        let mut col: Vec<f64> = self.points.iter().map(|g| kernel.eval(g, zi)).collect();
        for (lij, prev) in row[..i].iter().zip(&self.columns) {
            for (c, p) in col.iter_mut().zip(prev) {
                *c -= lij * p;
            }
        }
        let inv = 1.0 / row[i];
        let ci = model.whitened_targets()[i];
        for ((c, m), v) in col.iter_mut().zip(&mut self.mean).zip(&mut self.var) {
            *c *= inv;
            *m += *c * ci;
            *v -= *c * *c;
        }
        self.columns.push(col);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn mean(&self, g: usize) -> f64 {
        self.mean[g]
    }

    pub fn variance(&self, g: usize) -> f64 {
        self.var[g].clamp(0.0, self.prior_var[g])
    }

    pub fn stddev(&self, g: usize) -> f64 {
        self.variance(g).sqrt()
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }
}

/// Greedy information-gain curve: entry `t` is `Φ̂_t`.
///
/// Starting from the prior, repeatedly pick the probe point of largest
/// posterior variance (lowest index on ties), add `½ log(1 + σ²/η²)`, and
/// condition on a noisy observation there with noise variance `η²`.
pub fn information_gain_curve(
    kernel: &KernelSpec,
    noise_scale: f64,
    dim: usize,
    grid_size: usize,
    t_max: usize,
) -> Result<Vec<f64>> {
    if !(noise_scale > 0.0) {
        return Err(Error::invalid("noise scale must be positive"));
    }
    if grid_size == 0 {
        return Err(Error::invalid("information gain needs a non-empty probe grid"));
    }
    let grid = kronecker_points(grid_size, dim);
    let eta2 = noise_scale * noise_scale;
    let mut var: Vec<f64> = grid.iter().map(|p| kernel.diag(p)).collect();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(t_max);
    let mut curve = Vec::with_capacity(t_max + 1);
    let mut total = 0.0;
    curve.push(total);
    for _ in 0..t_max {
        let pick = argmax_first(&var);
        let sigma2 = var[pick].max(0.0);
        total += 0.5 * (1.0 + sigma2 / eta2).ln();
        curve.push(total);
        let pivot = (sigma2 + eta2).sqrt();
        let mut col: Vec<f64> = grid.iter().map(|g| kernel.eval(g, &grid[pick])).collect();
        for prev in &columns {
            let lp = prev[pick];
            for (c, p) in col.iter_mut().zip(prev) {
                *c -= lp * p;
            }
        }
        for (c, v) in col.iter_mut().zip(&mut var) {
            *c /= pivot;
            *v -= *c * *c;
        }
        columns.push(col);
    }
    Ok(curve)
}

/// `Φ̂_t` for the model's kernel and noise scale over a
/// [`INFO_GAIN_GRID`]-point probe set of the joint domain.
pub fn estimate_info_gain(model: &PosteriorModel, t: usize) -> Result<f64> {
    let curve = information_gain_curve(
        model.kernel(),
        model.config().noise_scale,
        model.joint_dim(),
        INFO_GAIN_GRID,
        t,
    )?;
    Ok(curve[t])
}

/// Information gain `½ Σ_t log(1 + σ²_{t−1}(q_t)/η²)` of a specific query
/// sequence under noise variance `η²`.
pub fn path_information_gain(kernel: &KernelSpec, noise_scale: f64, points: &[Vec<f64>]) -> Result<f64> {
    let eta2 = noise_scale * noise_scale;
    let mut factor = CholeskyFactor::empty();
    let mut total = 0.0;
    for (i, q) in points.iter().enumerate() {
        let cross: Vec<f64> = points[..i].iter().map(|p| kernel.eval(p, q)).collect();
        let schur = factor.push(&cross, kernel.diag(q) + eta2)?;
        total += 0.5 * (1.0 + (schur - eta2).max(0.0) / eta2).ln();
    }
    Ok(total)
}

/// Lowest index of the maximum; NaN entries never win.
pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}
