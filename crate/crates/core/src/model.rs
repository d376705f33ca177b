//! Domain types for reward batches: dimension registry, subspace keys,
//! rollout groups, and per-dimension advantage groups.
//!
//! Rewards are stored sparsely per active subspace; a rollout never carries
//! placeholder values for dimensions its task does not produce.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Index of a reward dimension within a [`DimensionRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DimensionId(pub u16);

/// Fixed, ordered set of reward dimension names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionRegistry {
    names: Vec<String>,
}

/// Dimension names used by the four-task mixture, in registry order.
pub const DEFAULT_DIMENSIONS: [&str; 6] = ["math", "code", "ifeval", "rubrics", "rm", "length"];

impl DimensionRegistry {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut out: Vec<String> = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref();
            if n.is_empty() {
                return Err(Error::InvalidSubspace("empty dimension name".into()));
            }
            if out.iter().any(|o| o == n) {
                return Err(Error::InvalidSubspace(format!("duplicate dimension name `{n}`")));
            }
            out.push(n.to_owned());
        }
        if out.len() > u16::MAX as usize {
            return Err(Error::InvalidSubspace("too many dimensions".into()));
        }
        Ok(Self { names: out })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<DimensionId> {
        self.names.iter().position(|n| n == name).map(|i| DimensionId(i as u16))
    }

    pub fn require(&self, name: &str) -> Result<DimensionId> {
        self.id(name).ok_or_else(|| Error::UnknownDimension(name.to_owned()))
    }

    pub fn name(&self, id: DimensionId) -> &str {
        &self.names[id.0 as usize]
    }

    /// Resolves names into a canonical key.
    pub fn subspace<S: AsRef<str>>(&self, names: &[S]) -> Result<SubspaceKey> {
        let ids = names.iter().map(|n| self.require(n.as_ref())).collect::<Result<Vec<_>>>()?;
        SubspaceKey::new(ids)
    }

    pub fn label(&self, key: &SubspaceKey) -> String {
        key.dims().iter().map(|&d| self.name(d)).collect::<Vec<_>>().join("+")
    }

    pub fn dim_names(&self, key: &SubspaceKey) -> Vec<String> {
        key.dims().iter().map(|&d| self.name(d).to_owned()).collect()
    }
}

impl Default for DimensionRegistry {
    fn default() -> Self {
        Self::new(&DEFAULT_DIMENSIONS).expect("default dimension names are unique")
    }
}

/// Canonical (ascending, duplicate-free, non-empty) set of reward dimensions.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubspaceKey(Arc<[DimensionId]>);

impl SubspaceKey {
    pub fn new(dims: impl IntoIterator<Item = DimensionId>) -> Result<Self> {
        let mut dims: Vec<DimensionId> = dims.into_iter().collect();
        if dims.is_empty() {
            return Err(Error::InvalidSubspace("subspace must contain at least one dimension".into()));
        }
        dims.sort_unstable();
        if let Some(w) = dims.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidSubspace(format!("duplicate dimension index {}", w[0].0)));
        }
        Ok(Self(dims.into()))
    }

    pub fn dims(&self) -> &[DimensionId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, dim: DimensionId) -> bool {
        self.0.binary_search(&dim).is_ok()
    }

    /// Column position of `dim` within this subspace.
    pub fn position(&self, dim: DimensionId) -> Option<usize> {
        self.0.binary_search(&dim).ok()
    }
}

impl fmt::Debug for SubspaceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for SubspaceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", d.0)?;
        }
        f.write_str("}")
    }
}

/// One rollout's scores, ordered like its subspace's dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector<T> {
    pub subspace: SubspaceKey,
    pub scores: Vec<T>,
}

impl<T: Real> RewardVector<T> {
    pub fn new(subspace: SubspaceKey, scores: Vec<T>) -> Self {
        Self { subspace, scores }
    }

    pub fn get(&self, dim: DimensionId) -> Option<T> {
        self.subspace.position(dim).and_then(|p| self.scores.get(p).copied())
    }
}

/// The G rollouts sampled for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup<T> {
    pub prompt_id: String,
    pub task_id: String,
    pub subspace: SubspaceKey,
    pub rollouts: Vec<RewardVector<T>>,
}

impl<T: Real> RolloutGroup<T> {
    /// Builds a group from G score rows sharing `subspace`.
    pub fn from_rows<R: AsRef<[T]>>(
        prompt_id: impl Into<String>,
        task_id: impl Into<String>,
        subspace: SubspaceKey,
        rows: &[R],
    ) -> Self {
        let rollouts = rows
            .iter()
            .map(|r| RewardVector::new(subspace.clone(), r.as_ref().to_vec()))
            .collect();
        Self { prompt_id: prompt_id.into(), task_id: task_id.into(), subspace, rollouts }
    }

    pub fn group_size(&self) -> usize {
        self.rollouts.len()
    }

    /// Scores for subspace column `k`, one per rollout.
    pub fn column(&self, k: usize) -> Vec<T> {
        self.rollouts.iter().map(|r| r.scores[k]).collect()
    }

    /// G x |S| score matrix.
    pub fn score_matrix(&self) -> Matrix<T> {
        let rows: Vec<&[T]> = self.rollouts.iter().map(|r| r.scores.as_slice()).collect();
        Matrix::from_rows(&rows)
    }
}

/// One training step's mixed-task collection of rollout groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub step: u64,
    pub groups: Vec<RolloutGroup<T>>,
}

impl<T: Real> Batch<T> {
    pub fn new(step: u64, groups: Vec<RolloutGroup<T>>) -> Self {
        Self { step, groups }
    }

    /// Distinct subspaces in first-appearance order.
    pub fn subspaces(&self) -> Vec<SubspaceKey> {
        let mut out: Vec<SubspaceKey> = Vec::new();
        for g in &self.groups {
            if !out.contains(&g.subspace) {
                out.push(g.subspace.clone());
            }
        }
        out
    }

    pub fn rollout_count(&self) -> usize {
        self.groups.iter().map(RolloutGroup::group_size).sum()
    }
}

/// Per-dimension advantages for one group: G rows by |S| columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageGroup<T> {
    pub prompt_id: String,
    pub subspace: SubspaceKey,
    pub advantages: Matrix<T>,
}

impl<T: Real> AdvantageGroup<T> {
    pub fn new(prompt_id: impl Into<String>, subspace: SubspaceKey, advantages: Matrix<T>) -> Self {
        Self { prompt_id: prompt_id.into(), subspace, advantages }
    }

    pub fn group_size(&self) -> usize {
        self.advantages.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViolationKind {
    EmptyBatch,
    GroupTooSmall { size: usize },
    SubspaceMismatch,
    ScoreCount { expected: usize, got: usize },
    NonFinite { column: usize, value: f64 },
    UnknownDimension(String),
    DuplicateDimension(String),
    EmptySubspace,
}

/// An invariant violation located by group (and rollout, where applicable).
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub group: Option<usize>,
    pub rollout: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(g) = self.group {
            write!(f, "group {g}")?;
            if let Some(r) = self.rollout {
                write!(f, ", rollout {r}")?;
            }
            f.write_str(": ")?;
        }
        match &self.kind {
            ViolationKind::EmptyBatch => f.write_str("batch has no groups"),
            ViolationKind::GroupTooSmall { size } => write!(f, "group size {size} < 2"),
            ViolationKind::SubspaceMismatch => f.write_str("rollout subspace differs from group subspace"),
            ViolationKind::ScoreCount { expected, got } => {
                write!(f, "expected {expected} scores, got {got}")
            }
            ViolationKind::NonFinite { column, value } => {
                write!(f, "non-finite score {value} in column {column}")
            }
            ViolationKind::UnknownDimension(d) => write!(f, "unknown reward dimension `{d}`"),
            ViolationKind::DuplicateDimension(d) => write!(f, "duplicate reward dimension `{d}`"),
            ViolationKind::EmptySubspace => f.write_str("group lists no reward dimensions"),
        }
    }
}

/// Lists every invariant violation in `batch`; an empty list means the batch is valid.
pub fn validate_batch<T: Real>(batch: &Batch<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    if batch.groups.is_empty() {
        out.push(Violation { group: None, rollout: None, kind: ViolationKind::EmptyBatch });
    }
    for (gi, group) in batch.groups.iter().enumerate() {
        if group.group_size() < 2 {
            out.push(Violation {
                group: Some(gi),
                rollout: None,
                kind: ViolationKind::GroupTooSmall { size: group.group_size() },
            });
        }
        for (ri, r) in group.rollouts.iter().enumerate() {
            let at = |kind| Violation { group: Some(gi), rollout: Some(ri), kind };
            if r.subspace != group.subspace {
                out.push(at(ViolationKind::SubspaceMismatch));
            }
            if r.scores.len() != group.subspace.len() {
                out.push(at(ViolationKind::ScoreCount {
                    expected: group.subspace.len(),
                    got: r.scores.len(),
                }));
            }
            for (k, s) in r.scores.iter().enumerate() {
                if !s.is_finite() {
                    out.push(at(ViolationKind::NonFinite { column: k, value: s.to_f64_lossy() }));
                }
            }
        }
    }
    out
}

/// Rejects invalid batches with all violations attached.
pub fn ensure_valid<T: Real>(batch: &Batch<T>) -> Result<()> {
    let v = validate_batch(batch);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidBatch(v))
    }
}

/// JSON form of a batch: dimension names per group and a G x |dims| score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDoc {
    pub step: u64,
    pub groups: Vec<GroupDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDoc {
    pub prompt_id: String,
    pub task_id: String,
    pub dims: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl BatchDoc {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Resolves dimension names against `registry`, reordering score columns
    /// into canonical subspace order, then validates the result.
    pub fn into_batch(self, registry: &DimensionRegistry) -> std::result::Result<Batch<f64>, Vec<Violation>> {
        let mut violations = Vec::new();
        let mut groups = Vec::with_capacity(self.groups.len());
        for (gi, g) in self.groups.into_iter().enumerate() {
            let at = |kind| Violation { group: Some(gi), rollout: None, kind };
            if g.dims.is_empty() {
                violations.push(at(ViolationKind::EmptySubspace));
                continue;
            }
            let mut ids = Vec::with_capacity(g.dims.len());
            let mut ok = true;
            for name in &g.dims {
                match registry.id(name) {
                    Some(id) if ids.contains(&id) => {
                        violations.push(at(ViolationKind::DuplicateDimension(name.clone())));
                        ok = false;
                    }
                    Some(id) => ids.push(id),
                    None => {
                        violations.push(at(ViolationKind::UnknownDimension(name.clone())));
                        ok = false;
                    }
                }
            }
            if !ok {
                continue;
            }
            let key = SubspaceKey::new(ids.iter().copied()).expect("ids checked non-empty and unique");
            // permutation from canonical column to source column
            let src_col: Vec<usize> =
                key.dims().iter().map(|d| ids.iter().position(|x| x == d).unwrap()).collect();
            let mut rollouts = Vec::with_capacity(g.scores.len());
            for (ri, row) in g.scores.iter().enumerate() {
                if row.len() != ids.len() {
                    violations.push(Violation {
                        group: Some(gi),
                        rollout: Some(ri),
                        kind: ViolationKind::ScoreCount { expected: ids.len(), got: row.len() },
                    });
                    continue;
                }
                let scores = src_col.iter().map(|&c| row[c]).collect();
                rollouts.push(RewardVector::new(key.clone(), scores));
            }
            groups.push(RolloutGroup { prompt_id: g.prompt_id, task_id: g.task_id, subspace: key, rollouts });
        }
        let batch = Batch::new(self.step, groups);
        if violations.is_empty() {
            violations = validate_batch(&batch);
        }
        if violations.is_empty() {
            Ok(batch)
        } else {
            Err(violations)
        }
    }

    pub fn from_batch(batch: &Batch<f64>, registry: &DimensionRegistry) -> Self {
        let groups = batch
            .groups
            .iter()
            .map(|g| GroupDoc {
                prompt_id: g.prompt_id.clone(),
                task_id: g.task_id.clone(),
                dims: registry.dim_names(&g.subspace),
                scores: g.rollouts.iter().map(|r| r.scores.clone()).collect(),
            })
            .collect();
        Self { step: batch.step, groups }
    }
}
