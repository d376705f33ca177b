//! Seeded generators for heterogeneous mixed-reward batches.
//!
//! Each task draws latent Gaussian vectors with a target correlation, pushes
//! every coordinate through Φ, and then through its dimension's quantile
//! function (a Gaussian copula). Marginals can be binary, fractional
//! (discrete levels), continuous with skew, or continuous with an outlier
//! component.
//!
//! Randomness is addressed hierarchically: one ChaCha8 key per
//! `(seed, step, task, prompt)` and one ChaCha stream per rollout, with
//! dimensions consumed in a fixed order inside the stream. Any group can be
//! regenerated in isolation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, symmetric_function, Matrix};
use crate::model::{Batch, DimensionId, DimensionRegistry, RewardVector, RolloutGroup, SubspaceKey};
use crate::normal::ppnd16;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousParams {
    pub location: f64,
    pub scale: f64,
    /// Sinh-arcsinh skew; 0 gives a normal marginal.
    #[serde(default)]
    pub skew: f64,
    /// Optional `[lo, hi]` clamp applied after sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<[f64; 2]>,
}

impl ContinuousParams {
    fn unclipped_quantile(&self, u: f64) -> f64 {
        let z = ppnd16(clamp_unit(u));
        self.location + self.scale * (z.asinh() + self.skew).sinh()
    }

    fn unclipped_cdf(&self, x: f64) -> f64 {
        let y = (x - self.location) / self.scale;
        normal_cdf((y.asinh() - self.skew).sinh())
    }

    fn clip(&self, x: f64) -> f64 {
        match self.clip {
            Some([lo, hi]) => x.max(lo).min(hi),
            None => x,
        }
    }

    fn validate(&self, path: &str) -> Result<()> {
        if !(self.location.is_finite() && self.skew.is_finite()) {
            return Err(Error::config(path, "location and skew must be finite"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::config(format!("{path}.scale"), "must be positive"));
        }
        if let Some([lo, hi]) = self.clip {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::config(format!("{path}.clip"), "needs finite lo < hi"));
            }
        }
        Ok(())
    }
}

fn clamp_unit(u: f64) -> f64 {
    u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Marginal distribution family of one reward dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Binary { p: f64 },
    /// Discrete levels (ascending) with probabilities summing to 1.
    Fractional { levels: Vec<f64>, weights: Vec<f64> },
    Continuous(ContinuousParams),
    /// With probability `outlier_prob` the base draw's deviation from its
    /// location is multiplied by `outlier_scale`.
    ContinuousWithOutliers { base: ContinuousParams, outlier_prob: f64, outlier_scale: f64 },
}

impl Family {
    pub fn validate(&self, path: &str) -> Result<()> {
        match self {
            Family::Binary { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::config(format!("{path}.p"), "probability must lie in [0, 1]"));
                }
            }
            Family::Fractional { levels, weights } => {
                if levels.is_empty() || levels.len() != weights.len() {
                    return Err(Error::config(path, "levels and weights must be non-empty and equal length"));
                }
                if levels.iter().any(|l| !l.is_finite()) || levels.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config(format!("{path}.levels"), "must be finite and strictly ascending"));
                }
                if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
                    return Err(Error::config(format!("{path}.weights"), "each weight must lie in [0, 1]"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::config(format!("{path}.weights"), format!("must sum to 1, got {total}")));
                }
            }
            Family::Continuous(c) => c.validate(path)?,
            Family::ContinuousWithOutliers { base, outlier_prob, outlier_scale } => {
                base.validate(&format!("{path}.base"))?;
                if !(0.0..=1.0).contains(outlier_prob) {
                    return Err(Error::config(format!("{path}.outlier_prob"), "must lie in [0, 1]"));
                }
                if !(outlier_scale.is_finite() && *outlier_scale > 0.0) {
                    return Err(Error::config(format!("{path}.outlier_scale"), "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Maps a copula coordinate `u` to a reward. `mix` is an independent
    /// uniform that selects the outlier component.
    pub fn quantile(&self, u: f64, mix: f64) -> f64 {
        match self {
            Family::Binary { p } => {
                if u > 1.0 - p {
                    1.0
                } else {
                    0.0
                }
            }
            Family::Fractional { levels, weights } => {
                let mut acc = 0.0;
                for (l, w) in levels.iter().zip(weights) {
                    acc += w;
                    if u < acc {
                        return *l;
                    }
                }
                *levels.last().expect("validated non-empty")
            }
            Family::Continuous(c) => c.clip(c.unclipped_quantile(u)),
            Family::ContinuousWithOutliers { base, outlier_prob, outlier_scale } => {
                let x = base.unclipped_quantile(u);
                let x = if mix < *outlier_prob { base.location + outlier_scale * (x - base.location) } else { x };
                base.clip(x)
            }
        }
    }

    /// Marginal CDF `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Family::Binary { p } => {
                if x < 0.0 {
                    0.0
                } else if x < 1.0 {
                    1.0 - p
                } else {
                    1.0
                }
            }
            Family::Fractional { levels, weights } => {
                levels.iter().zip(weights).filter(|(l, _)| **l <= x).map(|(_, w)| w).sum::<f64>().min(1.0)
            }
            Family::Continuous(c) => clipped_cdf(c, x, |x| c.unclipped_cdf(x)),
            Family::ContinuousWithOutliers { base, outlier_prob, outlier_scale } => clipped_cdf(base, x, |x| {
                let outlier_x = base.location + (x - base.location) / outlier_scale;
                (1.0 - outlier_prob) * base.unclipped_cdf(x) + outlier_prob * base.unclipped_cdf(outlier_x)
            }),
        }
    }
}

fn clipped_cdf(c: &ContinuousParams, x: f64, f: impl Fn(f64) -> f64) -> f64 {
    match c.clip {
        Some([lo, _]) if x < lo => 0.0,
        Some([_, hi]) if x >= hi => 1.0,
        _ => f(x),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub dim: String,
    #[serde(flatten)]
    pub family: Family,
}

/// One task of the mixture. `target_corr` is indexed in `dims` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub dims: Vec<DimensionSpec>,
    pub target_corr: Vec<Vec<f64>>,
    pub prompts_per_step: usize,
    pub group_size: usize,
}

/// A validated task ready for sampling.
#[derive(Debug, Clone)]
pub struct ResolvedTask {
    pub spec: TaskSpec,
    pub subspace: SubspaceKey,
    /// Symmetric square root of `target_corr` (spec order).
    factor: Matrix<f64>,
    /// For each canonical subspace column, the index in `spec.dims`.
    source_index: Vec<usize>,
}

impl TaskSpec {
    pub fn resolve(&self, registry: &DimensionRegistry) -> Result<ResolvedTask> {
        self.resolve_at(registry, &format!("mixture[{}]", self.task_id))
    }

    fn resolve_at(&self, registry: &DimensionRegistry, path: &str) -> Result<ResolvedTask> {
        if self.task_id.is_empty() {
            return Err(Error::config(format!("{path}.task_id"), "must be non-empty"));
        }
        if self.prompts_per_step == 0 {
            return Err(Error::config(format!("{path}.prompts_per_step"), "must be positive"));
        }
        if self.group_size < 2 {
            return Err(Error::config(format!("{path}.group_size"), "must be at least 2"));
        }
        let mut ids: Vec<DimensionId> = Vec::with_capacity(self.dims.len());
        for (i, d) in self.dims.iter().enumerate() {
            let at = format!("{path}.dims[{i}]");
            let id = registry
                .id(&d.dim)
                .ok_or_else(|| Error::config(format!("{at}.dim"), format!("unknown dimension `{}`", d.dim)))?;
            if ids.contains(&id) {
                return Err(Error::config(format!("{at}.dim"), format!("duplicate dimension `{}`", d.dim)));
            }
            ids.push(id);
            d.family.validate(&at)?;
        }
        let subspace = SubspaceKey::new(ids.iter().copied())
            .map_err(|e| Error::config(format!("{path}.dims"), e.to_string()))?;
        let factor = correlation_factor(&self.target_corr, self.dims.len(), &format!("{path}.target_corr"))?;
        let source_index = subspace.dims().iter().map(|d| ids.iter().position(|x| x == d).unwrap()).collect();
        Ok(ResolvedTask { spec: self.clone(), subspace, factor, source_index })
    }
}

/// Validates a correlation matrix (symmetric, unit diagonal, PSD) and returns
/// its symmetric square root.
fn correlation_factor(rows: &[Vec<f64>], n: usize, path: &str) -> Result<Matrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(path, format!("expected a {n}x{n} matrix")));
    }
    let m = Matrix::from_rows(rows);
    if !m.all_finite() || m.as_slice().iter().any(|x| x.abs() > 1.0) {
        return Err(Error::config(path, "entries must be finite and within [-1, 1]"));
    }
    if m.max_asymmetry() > 1e-12 {
        return Err(Error::config(path, "must be symmetric"));
    }
    if (0..n).any(|i| (m[(i, i)] - 1.0).abs() > 1e-12) {
        return Err(Error::config(path, "diagonal must be 1"));
    }
    let min_eig = symmetric_eigen(&m).values.first().copied().unwrap_or(0.0);
    if min_eig < -1e-9 {
        return Err(Error::config(path, format!("not positive semidefinite (min eigenvalue {min_eig:.3e})")));
    }
    Ok(symmetric_function(&m, |l| l.max(0.0).sqrt()))
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Address of one group's randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPath {
    pub seed: u64,
    pub step: u64,
    pub task: u64,
    pub prompt: u64,
}

impl SeedPath {
    fn key(&self) -> u64 {
        [self.step, self.task, self.prompt].iter().fold(splitmix64(self.seed), |h, &x| splitmix64(h ^ x))
    }

    fn rollout_rng(&self, rollout: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key());
        rng.set_stream(rollout as u64);
        rng
    }
}

impl ResolvedTask {
    pub fn group_size(&self) -> usize {
        self.spec.group_size
    }

    /// Draws one rollout's rewards in canonical subspace order.
    pub fn sample_rollout(&self, path: SeedPath, rollout: usize) -> Vec<f64> {
        let d = self.spec.dims.len();
        let mut rng = path.rollout_rng(rollout);
        let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mix: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let latent = self.factor.mat_vec(&eps);
        let values: Vec<f64> = self
            .spec
            .dims
            .iter()
            .enumerate()
            .map(|(k, spec)| spec.family.quantile(normal_cdf(latent[k]), mix[k]))
            .collect();
        self.source_index.iter().map(|&i| values[i]).collect()
    }

    pub fn sample_group(&self, path: SeedPath) -> RolloutGroup<f64> {
        let rollouts = (0..self.spec.group_size)
            .map(|j| RewardVector::new(self.subspace.clone(), self.sample_rollout(path, j)))
            .collect();
        RolloutGroup {
            prompt_id: format!("{}-s{}-p{}", self.spec.task_id, path.step, path.prompt),
            task_id: self.spec.task_id.clone(),
            subspace: self.subspace.clone(),
            rollouts,
        }
    }
}

/// A validated list of tasks.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub tasks: Vec<ResolvedTask>,
}

impl Mixture {
    pub fn resolve(specs: &[TaskSpec], registry: &DimensionRegistry) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::config("mixture", "needs at least one task"));
        }
        let mut tasks = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            if specs[..i].iter().any(|o| o.task_id == s.task_id) {
                return Err(Error::config(format!("mixture[{i}].task_id"), format!("duplicate task `{}`", s.task_id)));
            }
            tasks.push(s.resolve_at(registry, &format!("mixture[{i}]"))?);
        }
        Ok(Self { tasks })
    }

    /// `prompts_per_step` groups per task, tasks in mixture order.
    pub fn make_batch(&self, step: u64, seed: u64) -> Batch<f64> {
        let mut groups = Vec::new();
        for (ti, task) in self.tasks.iter().enumerate() {
            for p in 0..task.spec.prompts_per_step {
                groups.push(task.sample_group(SeedPath { seed, step, task: ti as u64, prompt: p as u64 }));
            }
        }
        Batch::new(step, groups)
    }
}

fn continuous(location: f64, scale: f64, skew: f64) -> ContinuousParams {
    ContinuousParams { location, scale, skew, clip: Some([0.0, 1.0]) }
}

fn dim(name: &str, family: Family) -> DimensionSpec {
    DimensionSpec { dim: name.into(), family }
}

/// The four-task mixture (math, code, instruction following, writing).
///
/// All rewards lie in `[0, 1]`. Within every task the largest per-dimension
/// standard deviation is at least three times the smallest, and co-occurring
/// dimensions are positively correlated through the copula.
pub fn default_paper_mixture() -> Vec<TaskSpec> {
    let task = |id: &str, dims: Vec<DimensionSpec>, corr: Vec<Vec<f64>>| TaskSpec {
        task_id: id.into(),
        dims,
        target_corr: corr,
        prompts_per_step: 16,
        group_size: 8,
    };
    vec![
        task(
            "math",
            vec![
                dim("math", Family::Binary { p: 0.55 }),
                dim("length", Family::Continuous(continuous(0.85, 0.06, -0.4))),
            ],
            vec![vec![1.0, 0.4], vec![0.4, 1.0]],
        ),
        task(
            "code",
            vec![
                dim("code", Family::Binary { p: 0.4 }),
                dim("length", Family::Continuous(continuous(0.8, 0.08, -0.3))),
            ],
            vec![vec![1.0, 0.35], vec![0.35, 1.0]],
        ),
        task(
            "ifeval",
            vec![
                dim("ifeval", Family::Binary { p: 0.6 }),
                dim(
                    "rubrics",
                    Family::Fractional {
                        levels: vec![0.5, 0.625, 0.75, 0.875, 1.0],
                        weights: vec![0.1, 0.2, 0.3, 0.25, 0.15],
                    },
                ),
            ],
            vec![vec![1.0, 0.5], vec![0.5, 1.0]],
        ),
        task(
            "writing",
            vec![
                dim(
                    "rubrics",
                    Family::Fractional {
                        levels: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                        weights: vec![0.05, 0.1, 0.15, 0.25, 0.3, 0.15],
                    },
                ),
                dim(
                    "rm",
                    Family::ContinuousWithOutliers {
                        base: continuous(0.55, 0.12, 0.3),
                        outlier_prob: 0.05,
                        outlier_scale: 3.0,
                    },
                ),
                dim("length", Family::Continuous(continuous(0.9, 0.04, -0.5))),
            ],
            vec![vec![1.0, 0.6, 0.2], vec![0.6, 1.0, 0.3], vec![0.2, 0.3, 1.0]],
        ),
    ]
}
