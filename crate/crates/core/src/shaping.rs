//! Length reward and conditional reward gating, applied to raw rewards
//! before any normalization.
//!
//! Gating truncates an auxiliary reward to `min(guard, gated)` whenever the
//! guard reward falls below the threshold, so auxiliary signals (RM score,
//! length) cannot compensate for a failed core requirement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DimensionId, DimensionRegistry, RolloutGroup, SubspaceKey};
use crate::scalar::Real;

pub const DEFAULT_GATE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthRewardParams<T> {
    /// Overrun, in multiples of the reference length, at which the reward reaches 0.
    pub gamma: T,
}

impl<T: Real> LengthRewardParams<T> {
    pub fn new(gamma: T) -> Result<Self> {
        if !(gamma.is_finite() && gamma > T::zero()) {
            return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
        }
        Ok(Self { gamma })
    }
}

impl<T: Real> Default for LengthRewardParams<T> {
    fn default() -> Self {
        Self { gamma: T::one() }
    }
}

/// 1 up to `l_ref`, then `1 - ((len - l_ref)/(γ l_ref))²` clipped to `[0, 1]`.
pub fn length_reward<T: Real>(length: T, l_ref: T, params: &LengthRewardParams<T>) -> Result<T> {
    if !(l_ref.is_finite() && l_ref > T::zero()) {
        return Err(Error::param("l_ref", format!("must be positive, got {l_ref}")));
    }
    if !(length.is_finite() && length >= T::zero()) {
        return Err(Error::param("length", format!("must be non-negative, got {length}")));
    }
    if length <= l_ref {
        return Ok(T::one());
    }
    let over = (length - l_ref) / (params.gamma * l_ref);
    Ok((T::one() - over * over).max(T::zero()).min(T::one()))
}

fn check_unit<T: Real>(name: &'static str, v: T) -> Result<()> {
    if v >= T::zero() && v <= T::one() {
        Ok(())
    } else {
        Err(Error::OutOfUnitRange { name, value: v.to_f64_lossy() })
    }
}

fn gate<T: Real>(guard_name: &'static str, guard: T, gated_name: &'static str, gated: T, threshold: T) -> Result<T> {
    check_unit(guard_name, guard)?;
    check_unit(gated_name, gated)?;
    Ok(if guard < threshold { guard.min(gated) } else { gated })
}

/// RM reward truncated to the rubric reward when the rubric reward fails the threshold.
pub fn gate_rm<T: Real>(rubric: T, rm: T, threshold: T) -> Result<T> {
    gate("rubric", rubric, "rm", rm, threshold)
}

/// Length reward truncated to the primary task reward when the primary reward fails the threshold.
pub fn gate_length<T: Real>(primary: T, length: T, threshold: T) -> Result<T> {
    gate("primary", primary, "length", length, threshold)
}

/// Serialized per-task gating rules, keyed by dimension names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub tasks: BTreeMap<String, TaskGatingConfig>,
}

fn default_threshold() -> f64 {
    DEFAULT_GATE_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGatingConfig {
    pub primary: String,
    #[serde(default)]
    pub pairs: Vec<GatePairConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatePairConfig {
    pub guard: String,
    pub gated: String,
}

impl GatingConfig {
    /// Rules for the four-task mixture: math, code and writing gate length on
    /// their primary reward; writing also gates RM on rubrics. Instruction
    /// following has no length reward in its subspace, so it has no pairs.
    pub fn paper_default() -> Self {
        let pair = |guard: &str, gated: &str| GatePairConfig { guard: guard.into(), gated: gated.into() };
        let mut tasks = BTreeMap::new();
        tasks.insert("math".into(), TaskGatingConfig { primary: "math".into(), pairs: vec![pair("math", "length")] });
        tasks.insert("code".into(), TaskGatingConfig { primary: "code".into(), pairs: vec![pair("code", "length")] });
        tasks.insert("ifeval".into(), TaskGatingConfig { primary: "ifeval".into(), pairs: vec![] });
        tasks.insert(
            "writing".into(),
            TaskGatingConfig {
                primary: "rubrics".into(),
                pairs: vec![pair("rubrics", "rm"), pair("rubrics", "length")],
            },
        );
        Self { threshold: DEFAULT_GATE_THRESHOLD, tasks }
    }

    pub fn resolve(&self, registry: &DimensionRegistry) -> Result<GatingPolicy<f64>> {
        if !(self.threshold.is_finite() && (0.0..=1.0).contains(&self.threshold)) {
            return Err(Error::config("gating.threshold", "must lie in [0, 1]"));
        }
        let mut tasks = BTreeMap::new();
        for (task, cfg) in &self.tasks {
            let at = |field: &str| format!("gating.tasks.{task}.{field}");
            let lookup = |name: &str, field: &str| {
                registry.id(name).ok_or_else(|| Error::config(at(field), format!("unknown dimension `{name}`")))
            };
            let primary = lookup(&cfg.primary, "primary")?;
            let mut pairs = Vec::with_capacity(cfg.pairs.len());
            for p in &cfg.pairs {
                let guard = lookup(&p.guard, "pairs.guard")?;
                let gated = lookup(&p.gated, "pairs.gated")?;
                if guard == gated {
                    return Err(Error::config(at("pairs"), format!("`{}` cannot gate itself", p.guard)));
                }
                pairs.push(GatePair { guard, gated });
            }
            if pairs.iter().any(|p| pairs.iter().any(|q| q.gated == p.guard)) {
                return Err(Error::config(at("pairs"), "a guard dimension cannot also be gated"));
            }
            tasks.insert(task.clone(), TaskGate { primary, pairs });
        }
        Ok(GatingPolicy { threshold: self.threshold, tasks })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatePair {
    pub guard: DimensionId,
    pub gated: DimensionId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGate {
    pub primary: DimensionId,
    pub pairs: Vec<GatePair>,
}

/// Resolved gating rules. Guards are never themselves gated, which makes
/// [`apply_gating`] idempotent.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingPolicy<T> {
    pub threshold: T,
    pub tasks: BTreeMap<String, TaskGate>,
}

impl<T: Real> GatingPolicy<T> {
    /// Checks that every configured guard/gated dimension of `task_id` lies in `subspace`.
    pub fn check_task(&self, task_id: &str, subspace: &SubspaceKey) -> Result<()> {
        let gate = self.tasks.get(task_id).ok_or_else(|| Error::MissingPolicy(task_id.to_owned()))?;
        let dims = std::iter::once(gate.primary).chain(gate.pairs.iter().flat_map(|p| [p.guard, p.gated]));
        for d in dims {
            if !subspace.contains(d) {
                return Err(Error::config(
                    format!("gating.tasks.{task_id}"),
                    format!("dimension #{} is not in the task subspace {subspace}", d.0),
                ));
            }
        }
        Ok(())
    }
}

/// Applies the task's gate pairs to every rollout. Pairs whose dimensions are
/// not both present in the group's subspace do not fire.
pub fn apply_gating<T: Real>(group: &RolloutGroup<T>, policy: &GatingPolicy<T>) -> Result<RolloutGroup<T>> {
    let task = policy.tasks.get(&group.task_id).ok_or_else(|| Error::MissingPolicy(group.task_id.clone()))?;
    let active: Vec<(usize, usize)> = task
        .pairs
        .iter()
        .filter_map(|p| Some((group.subspace.position(p.guard)?, group.subspace.position(p.gated)?)))
        .collect();
    let mut out = group.clone();
    for r in &mut out.rollouts {
        for &(gk, tk) in &active {
            r.scores[tk] = gate("guard", r.scores[gk], "gated", r.scores[tk], policy.threshold)?;
        }
    }
    Ok(out)
}
