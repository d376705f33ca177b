//! One method's advantage construction for one step.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::model::{AdvantageGroup, Batch, DimensionRegistry, SubspaceKey};
use crate::normalizers::{compute_global_scale, gdpo_zscore, grpo_aggregate, maq_group, GlobalScale, MaqParams};
use crate::whitening::{batch_normalize, final_advantage, whiten_group, CovarianceEstimator, EstimatorSnapshot};

use super::config::{BatchNormScope, Method};

/// Hyperparameters shared by all methods.
#[derive(Debug, Clone)]
pub struct MethodSettings {
    pub maq: MaqParams<f64>,
    pub scale_smoothing: Option<f64>,
    pub alpha: f64,
    pub t_warm: u64,
    pub eigen_floor: f64,
    pub whiten_before_update: bool,
    pub batch_norm_scope: BatchNormScope,
}

impl Default for MethodSettings {
    fn default() -> Self {
        let w = super::config::WhiteningConfig::default();
        Self {
            maq: MaqParams::default(),
            scale_smoothing: None,
            alpha: w.alpha,
            t_warm: w.t_warm,
            eigen_floor: w.eigen_floor,
            whiten_before_update: w.whiten_before_update,
            batch_norm_scope: w.batch_norm_scope,
        }
    }
}

/// State a method carries across steps.
#[derive(Debug, Clone)]
pub struct MethodState {
    pub method: Method,
    pub estimators: BTreeMap<SubspaceKey, CovarianceEstimator<f64>>,
    smoothed_scale: Option<GlobalScale<f64>>,
}

impl MethodState {
    pub fn new(method: Method) -> Self {
        Self { method, estimators: BTreeMap::new(), smoothed_scale: None }
    }

    pub fn snapshots(&self, registry: &DimensionRegistry) -> Vec<EstimatorSnapshot> {
        self.estimators.values().map(|e| e.to_snapshot(registry)).collect()
    }

    fn scale_for(&mut self, batch: &Batch<f64>, smoothing: Option<f64>) -> GlobalScale<f64> {
        let current = compute_global_scale(batch);
        let Some(a) = smoothing else {
            return current;
        };
        let mut next = GlobalScale::new();
        for (dim, s) in current.iter() {
            let v = match self.smoothed_scale.as_ref().and_then(|prev| prev.get(dim)) {
                Some(prev) => (1.0 - a) * prev + a * s,
                None => s,
            };
            next.insert(dim, v);
        }
        if let Some(prev) = &self.smoothed_scale {
            for (dim, s) in prev.iter() {
                if next.get(dim).is_none() {
                    next.insert(dim, s);
                }
            }
        }
        self.smoothed_scale = Some(next.clone());
        next
    }
}

/// Per-group results of [`method_pipeline`], in batch group order.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    /// Final per-rollout scalar advantages.
    pub scalars: Vec<Vec<f64>>,
    /// Per-dimension advantages after normalization (and whitening, when
    /// active). `None` for GRPO, which sums before normalizing.
    pub per_dim: Option<Vec<AdvantageGroup<f64>>>,
}

pub fn method_pipeline(
    method: Method,
    batch: &Batch<f64>,
    state: &mut MethodState,
    settings: &MethodSettings,
) -> Result<MethodOutput> {
    if method == Method::Grpo {
        let scalars = batch.groups.iter().map(|g| grpo_aggregate(g).advantages).collect();
        return Ok(MethodOutput { scalars, per_dim: None });
    }

    let mut adv: Vec<AdvantageGroup<f64>> = if method.uses_maq() {
        let scale = state.scale_for(batch, settings.scale_smoothing);
        batch.groups.iter().map(|g| maq_group(g, &scale, &settings.maq)).collect::<Result<_>>()?
    } else {
        batch.groups.iter().map(gdpo_zscore).collect()
    };

    if method.uses_whitening() {
        for key in batch.subspaces() {
            let idx: Vec<usize> = (0..adv.len()).filter(|&i| adv[i].subspace == key).collect();
            let est = match state.estimators.entry(key.clone()) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(CovarianceEstimator::new(key, settings.alpha, settings.t_warm)?)
                }
            };
            // the warm check always counts updates completed before this step
            let warm = est.is_warm();
            if settings.whiten_before_update {
                let whitened: Vec<_> =
                    idx.iter().map(|&i| whiten_group(&adv[i], est, settings.eigen_floor)).collect::<Result<_>>()?;
                est.update_from_groups(idx.iter().map(|&i| &adv[i]))?;
                for (&i, w) in idx.iter().zip(whitened) {
                    adv[i] = w;
                }
            } else {
                est.update_from_groups(idx.iter().map(|&i| &adv[i]))?;
                if warm {
                    let w = est.whitening_matrix(settings.eigen_floor)?;
                    for &i in &idx {
                        adv[i] = w.apply(&adv[i])?;
                    }
                }
            }
        }
    }

    let raw: Vec<Vec<f64>> = adv.iter().map(final_advantage).collect();
    let scalars = normalize_scalars(batch, raw, settings.batch_norm_scope);
    Ok(MethodOutput { scalars, per_dim: Some(adv) })
}

fn normalize_scalars(batch: &Batch<f64>, raw: Vec<Vec<f64>>, scope: BatchNormScope) -> Vec<Vec<f64>> {
    let mut pools: Vec<Vec<usize>> = Vec::new();
    match scope {
        BatchNormScope::Batch => pools.push((0..raw.len()).collect()),
        BatchNormScope::Task => {
            let mut tasks: Vec<&str> = Vec::new();
            for (i, g) in batch.groups.iter().enumerate() {
                match tasks.iter().position(|t| *t == g.task_id) {
                    Some(p) => pools[p].push(i),
                    None => {
                        tasks.push(&g.task_id);
                        pools.push(vec![i]);
                    }
                }
            }
        }
    }
    let mut out = raw.clone();
    for pool in pools {
        let flat: Vec<f64> = pool.iter().flat_map(|&i| raw[i].iter().copied()).collect();
        let mut normalized = batch_normalize(&flat).into_iter();
        for &i in &pool {
            for v in out[i].iter_mut() {
                *v = normalized.next().expect("lengths match");
            }
        }
    }
    out
}
