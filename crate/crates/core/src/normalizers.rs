//! Group-level reward-to-advantage transforms.
//!
//! * [`grpo_aggregate`]: sum raw rewards, then standardize within the group.
//! * [`gdpo_zscore`]: standardize each dimension within the group.
//! * [`maq_normalize`] / [`maq_group`]: magnitude-aware quantile normalization.
//!   Sorted adjacent gaps are log-compressed relative to a batch-wide robust
//!   scale, CDF positions are allocated in proportion to the compressed gaps,
//!   and positions are mapped through the standard normal quantile function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{AdvantageGroup, Batch, DimensionId, RolloutGroup};
use crate::normal::ppnd16;
use crate::scalar::Real;
use crate::stats;

/// Floor for the global scale after both IQR and std vanish.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Output of [`grpo_aggregate`].
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoOutput<T> {
    /// Per-rollout raw reward sums.
    pub sums: Vec<T>,
    /// Group-standardized sums.
    pub advantages: Vec<T>,
}

pub fn grpo_aggregate<T: Real>(group: &RolloutGroup<T>) -> GrpoOutput<T> {
    let sums: Vec<T> = group.rollouts.iter().map(|r| r.scores.iter().copied().sum()).collect();
    let advantages = stats::standardize(&sums);
    GrpoOutput { sums, advantages }
}

/// Per-dimension Z-score within the group (population std; constant columns become zeros).
pub fn gdpo_zscore<T: Real>(group: &RolloutGroup<T>) -> AdvantageGroup<T> {
    let g = group.group_size();
    let mut adv = Matrix::zeros(g, group.subspace.len());
    for k in 0..group.subspace.len() {
        adv.set_column(k, &stats::standardize(&group.column(k)));
    }
    AdvantageGroup::new(group.prompt_id.clone(), group.subspace.clone(), adv)
}

/// Robust per-dimension scale for MAQ gap compression.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalScale<T> {
    scales: BTreeMap<DimensionId, T>,
}

impl<T: Real> GlobalScale<T> {
    pub fn new() -> Self {
        Self { scales: BTreeMap::new() }
    }

    /// Sets a scale; non-positive or non-finite values are raised to the floor.
    pub fn insert(&mut self, dim: DimensionId, scale: T) {
        let floor = T::lit(SCALE_FLOOR);
        let s = if scale.is_finite() && scale > floor { scale } else { floor };
        self.scales.insert(dim, s);
    }

    pub fn get(&self, dim: DimensionId) -> Option<T> {
        self.scales.get(&dim).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (DimensionId, T)> + '_ {
        self.scales.iter().map(|(&d, &s)| (d, s))
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

impl<T: Real> Default for GlobalScale<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Scale of one pooled sample: IQR, else population std, else [`SCALE_FLOOR`].
pub fn robust_scale<T: Real>(values: &[T]) -> T {
    let iqr = stats::iqr(values);
    if iqr > T::zero() {
        return iqr;
    }
    let sd = stats::pop_std(values);
    if sd > T::zero() {
        return sd;
    }
    T::lit(SCALE_FLOOR)
}

/// Pools every score of each dimension across all groups whose subspace
/// contains it and takes its [`robust_scale`].
pub fn compute_global_scale<T: Real>(batch: &Batch<T>) -> GlobalScale<T> {
    let mut pooled: BTreeMap<DimensionId, Vec<T>> = BTreeMap::new();
    for g in &batch.groups {
        for (k, &dim) in g.subspace.dims().iter().enumerate() {
            pooled.entry(dim).or_default().extend(g.rollouts.iter().map(|r| r.scores[k]));
        }
    }
    let mut scale = GlobalScale::new();
    for (dim, values) in pooled {
        scale.insert(dim, robust_scale(&values));
    }
    scale
}

/// Where the lowest and highest rollouts land on the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginRule {
    /// `1/(2G)` and `1 - 1/(2G)`; uniform gaps reproduce van der Waerden scores.
    #[default]
    HalfRank,
    /// Blom's `(1 - 3/8)/(G + 1/4)` and its mirror.
    Blom,
}

impl MarginRule {
    pub fn bounds<T: Real>(self, g: usize) -> (T, T) {
        let g = T::from_count(g);
        let lo = match self {
            MarginRule::HalfRank => T::one() / (T::lit(2.0) * g),
            MarginRule::Blom => T::lit(0.625) / (g + T::lit(0.25)),
        };
        (lo, T::one() - lo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaqParams<T> {
    /// Gap compression strength, `> 0`.
    pub beta: T,
    pub margin: MarginRule,
}

impl<T: Real> MaqParams<T> {
    pub fn new(beta: T) -> Result<Self> {
        if !(beta.is_finite() && beta > T::zero()) {
            return Err(Error::param("beta", format!("must be positive and finite, got {beta}")));
        }
        Ok(Self { beta, margin: MarginRule::HalfRank })
    }

    pub fn with_margin(mut self, margin: MarginRule) -> Self {
        self.margin = margin;
        self
    }
}

impl<T: Real> Default for MaqParams<T> {
    fn default() -> Self {
        Self { beta: T::one(), margin: MarginRule::HalfRank }
    }
}

/// Magnitude-aware quantile normalization of one group's values on one dimension.
///
/// Ties receive identical advantages; a group with no spread maps to zeros.
pub fn maq_normalize<T: Real>(values: &[T], sigma_global: T, params: &MaqParams<T>) -> Result<Vec<T>> {
    let g = values.len();
    if g < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: g });
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index: i, value: v.to_f64_lossy() });
    }
    if !(sigma_global.is_finite() && sigma_global > T::zero()) {
        return Err(Error::param("sigma_global", format!("must be positive, got {sigma_global}")));
    }
    if !(params.beta.is_finite() && params.beta > T::zero()) {
        return Err(Error::param("beta", format!("must be positive, got {}", params.beta)));
    }

    let mut order: Vec<usize> = (0..g).collect();
    // stable: ties keep input order
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));

    let denom = params.beta * sigma_global;
    let gaps: Vec<T> = order
        .windows(2)
        .map(|w| ((values[w[1]] - values[w[0]]).abs() / denom).ln_1p())
        .collect();
    let total: T = gaps.iter().copied().sum();
    if total.is_nan() || total <= T::zero() {
        return Ok(vec![T::zero(); g]);
    }

    let (u_min, u_max) = params.margin.bounds::<T>(g);
    let span = u_max - u_min;
    let mut out = vec![T::zero(); g];
    let mut prefix = T::zero();
    for (rank, &idx) in order.iter().enumerate() {
        if rank > 0 {
            prefix = prefix + gaps[rank - 1];
        }
        let u = (u_min + span * (prefix / total)).max(u_min).min(u_max);
        out[idx] = ppnd16(u);
    }
    Ok(out)
}

/// Column-wise [`maq_normalize`] using each dimension's global scale.
pub fn maq_group<T: Real>(
    group: &RolloutGroup<T>,
    scale: &GlobalScale<T>,
    params: &MaqParams<T>,
) -> Result<AdvantageGroup<T>> {
    let g = group.group_size();
    let mut adv = Matrix::zeros(g, group.subspace.len());
    for (k, &dim) in group.subspace.dims().iter().enumerate() {
        let sigma = scale.get(dim).ok_or_else(|| Error::MissingScale(format!("#{}", dim.0)))?;
        adv.set_column(k, &maq_normalize(&group.column(k), sigma, params)?);
    }
    Ok(AdvantageGroup::new(group.prompt_id.clone(), group.subspace.clone(), adv))
}
