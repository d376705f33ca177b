//! Aggregation-quality diagnostics.
//!
//! `η_eff = η_proj · η_corr`, where `η_proj` is the squared cosine between the
//! effective aggregation weights and the all-ones direction, and `η_corr` is
//! `n / 1ᵀ|ρ|1` for the element-wise absolute correlation matrix of the summed
//! dimensions. Prompt-level allocation is summarized by advantage domination
//! (largest share of absolute advantage mass) and effective rollout
//! participation (normalized inverse participation ratio).

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Batch, SubspaceKey};
use crate::scalar::Real;
use crate::stats;

/// `(wᵀ1)² / (n‖w‖²)`.
pub fn eta_proj<T: Real>(w: &[T]) -> Result<T> {
    let norm_sq: T = w.iter().map(|&x| x * x).sum();
    if w.is_empty() || norm_sq.is_nan() || norm_sq <= T::zero() {
        return Err(Error::ZeroVector);
    }
    let s: T = w.iter().copied().sum();
    Ok(s * s / (T::from_count(w.len()) * norm_sq))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix<T> {
    pub subspace: SubspaceKey,
    pub rho: Matrix<T>,
}

impl<T: Real> CorrelationMatrix<T> {
    /// Validates shape, symmetry, unit diagonal and entry range.
    pub fn new(subspace: SubspaceKey, rho: Matrix<T>) -> Result<Self> {
        let n = subspace.len();
        if rho.rows() != n || rho.cols() != n {
            return Err(Error::param("rho", format!("expected {n}x{n}")));
        }
        let tol = T::lit(1e-12);
        if rho.max_asymmetry() > tol {
            return Err(Error::NotSymmetric(rho.max_asymmetry().to_f64_lossy()));
        }
        for i in 0..n {
            if (rho[(i, i)] - T::one()).abs() > tol {
                return Err(Error::param("rho", "diagonal must be 1"));
            }
            for j in 0..n {
                if rho[(i, j)].is_nan() || rho[(i, j)].abs() > T::one() + tol {
                    return Err(Error::param("rho", "entries must lie in [-1, 1]"));
                }
            }
        }
        Ok(Self { subspace, rho })
    }

    pub fn dim(&self) -> usize {
        self.rho.rows()
    }
}

/// `n / Σ_kl |ρ_kl|`.
pub fn eta_corr<T: Real>(corr: &CorrelationMatrix<T>) -> T {
    let total: T = corr.rho.as_slice().iter().map(|x| x.abs()).sum();
    T::from_count(corr.dim()) / total
}

pub fn eta_eff<T: Real>(eta_proj: T, eta_corr: T) -> T {
    eta_proj * eta_corr
}

/// Population std of each dimension's raw rewards, pooled over every rollout
/// in `batch` whose group lives in `subspace`. These are the effective weights
/// raw summation places on standardized rewards.
pub fn grpo_implicit_weights<T: Real>(batch: &Batch<T>, subspace: &SubspaceKey) -> Result<Vec<T>> {
    let mut columns: Vec<Vec<T>> = vec![Vec::new(); subspace.len()];
    for g in batch.groups.iter().filter(|g| &g.subspace == subspace) {
        for r in &g.rollouts {
            for (k, &s) in r.scores.iter().enumerate() {
                columns[k].push(s);
            }
        }
    }
    let m = columns.first().map_or(0, Vec::len);
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: m });
    }
    Ok(columns.iter().map(|c| stats::pop_std(c)).collect())
}

/// A prompt-level allocation statistic, flagged when the group carries no advantage mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationStat<T> {
    pub value: T,
    pub degenerate: bool,
}

fn mass_shares<T: Real>(advantages: &[T]) -> Option<Vec<T>> {
    let total: T = advantages.iter().map(|a| a.abs()).sum();
    if total.is_nan() || total <= T::zero() {
        return None;
    }
    Some(advantages.iter().map(|a| a.abs() / total).collect())
}

/// Largest rollout share of absolute advantage mass, in `[1/G, 1]`.
/// An all-zero group reports `1/G`, flagged degenerate.
pub fn domination<T: Real>(advantages: &[T]) -> AllocationStat<T> {
    match mass_shares(advantages) {
        Some(p) => AllocationStat { value: p.into_iter().fold(T::zero(), T::max), degenerate: false },
        None => AllocationStat { value: T::one() / T::from_count(advantages.len().max(1)), degenerate: true },
    }
}

/// `1 / (G Σ p_j²)`, in `(0, 1]`. An all-zero group reports 1, flagged degenerate.
pub fn participation<T: Real>(advantages: &[T]) -> AllocationStat<T> {
    match mass_shares(advantages) {
        Some(p) => {
            let ss: T = p.iter().map(|&x| x * x).sum();
            let v = T::one() / (T::from_count(advantages.len()) * ss);
            AllocationStat { value: v.min(T::one()), degenerate: false }
        }
        None => AllocationStat { value: T::one(), degenerate: true },
    }
}

/// Pearson correlation of the columns of `samples` (m rows by |S| columns).
/// Pairs involving a zero-variance column get 0.
pub fn pearson_matrix<T: Real>(subspace: &SubspaceKey, samples: &Matrix<T>) -> Result<CorrelationMatrix<T>> {
    let (m, d) = (samples.rows(), samples.cols());
    if d != subspace.len() {
        return Err(Error::param("samples", format!("expected {} columns, got {d}", subspace.len())));
    }
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: m });
    }
    let cols: Vec<Vec<T>> = (0..d).map(|j| samples.column(j)).collect();
    let means: Vec<T> = cols.iter().map(|c| stats::mean(c)).collect();
    let sds: Vec<T> = cols.iter().map(|c| stats::pop_std(c)).collect();
    let live: Vec<bool> = (0..d).map(|j| stats::is_nonzero_spread(sds[j], means[j])).collect();
    let inv_m = T::one() / T::from_count(m);

    let mut rho = Matrix::identity(d);
    for i in 0..d {
        for j in (i + 1)..d {
            let r = if live[i] && live[j] {
                let cov: T = cols[i]
                    .iter()
                    .zip(&cols[j])
                    .map(|(&x, &y)| (x - means[i]) * (y - means[j]))
                    .sum::<T>()
                    * inv_m;
                (cov / (sds[i] * sds[j])).max(-T::one()).min(T::one())
            } else {
                T::zero()
            };
            rho[(i, j)] = r;
            rho[(j, i)] = r;
        }
    }
    Ok(CorrelationMatrix { subspace: subspace.clone(), rho })
}

/// Mean `|ρ_kl|` over pairs `k < l`.
pub fn mean_abs_offdiag<T: Real>(corr: &CorrelationMatrix<T>) -> Result<T> {
    let n = corr.dim();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let mut total = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            total = total + corr.rho[(i, j)].abs();
        }
    }
    Ok(total / T::from_count(n * (n - 1) / 2))
}

/// Diagnostics for one active subspace at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceDiagnostics<T> {
    pub subspace: SubspaceKey,
    pub eta_proj: T,
    pub eta_corr: T,
    pub eta_eff: T,
    /// 0 for single-dimension subspaces, which have no pairs.
    pub mean_abs_corr: T,
    /// Prompt-mean domination of the per-rollout scalar advantages.
    pub domination: T,
    pub participation: T,
    /// Same statistics computed per dimension on the per-dimension
    /// advantages, averaged over prompts and dimensions.
    pub domination_per_dim: T,
    pub participation_per_dim: T,
    pub degenerate_count: usize,
    pub groups: usize,
}

/// Method-specific inputs for one subspace.
pub struct SubspaceInputs<'a, T> {
    pub subspace: &'a SubspaceKey,
    /// Effective aggregation weights.
    pub weights: &'a [T],
    /// Rows whose column correlations measure redundancy in the summed signal.
    pub correlation_samples: &'a Matrix<T>,
    /// Final per-rollout scalar advantages, one vector per prompt.
    pub scalars: &'a [Vec<T>],
    /// Per-dimension advantages, one matrix per prompt (may be empty).
    pub per_dim: &'a [&'a Matrix<T>],
}

pub fn subspace_diagnostics<T: Real>(inputs: &SubspaceInputs<'_, T>) -> Result<SubspaceDiagnostics<T>> {
    let corr = pearson_matrix(inputs.subspace, inputs.correlation_samples)?;
    // all-zero weights (every dimension constant) carry no direction; treat as aligned
    let eta_proj = match eta_proj(inputs.weights) {
        Ok(v) => v,
        Err(Error::ZeroVector) => T::one(),
        Err(e) => return Err(e),
    };
    let eta_corr = eta_corr(&corr);
    let mean_abs_corr = if corr.dim() >= 2 { mean_abs_offdiag(&corr)? } else { T::zero() };

    let groups = inputs.scalars.len();
    let mut dom = T::zero();
    let mut part = T::zero();
    let mut degenerate_count = 0;
    for s in inputs.scalars {
        let d = domination(s);
        let p = participation(s);
        dom = dom + d.value;
        part = part + p.value;
        degenerate_count += usize::from(d.degenerate);
    }
    let denom = T::from_count(groups.max(1));

    let mut dom_dim = T::zero();
    let mut part_dim = T::zero();
    let mut cells = 0usize;
    for m in inputs.per_dim {
        for k in 0..m.cols() {
            let col = m.column(k);
            dom_dim = dom_dim + domination(&col).value;
            part_dim = part_dim + participation(&col).value;
            cells += 1;
        }
    }
    let cell_denom = T::from_count(cells.max(1));

    Ok(SubspaceDiagnostics {
        subspace: inputs.subspace.clone(),
        eta_proj,
        eta_corr,
        eta_eff: eta_eff(eta_proj, eta_corr),
        mean_abs_corr,
        domination: dom / denom,
        participation: part / denom,
        domination_per_dim: dom_dim / cell_denom,
        participation_per_dim: part_dim / cell_denom,
        degenerate_count,
        groups,
    })
}

/// Equal-weight average across subspaces; degenerate counts are summed.
pub fn aggregate<T: Real>(per_subspace: &[SubspaceDiagnostics<T>]) -> Option<AggregateDiagnostics<T>> {
    if per_subspace.is_empty() {
        return None;
    }
    let n = T::from_count(per_subspace.len());
    let avg = |f: fn(&SubspaceDiagnostics<T>) -> T| per_subspace.iter().map(f).sum::<T>() / n;
    Some(AggregateDiagnostics {
        eta_proj: avg(|d| d.eta_proj),
        eta_corr: avg(|d| d.eta_corr),
        eta_eff: avg(|d| d.eta_eff),
        mean_abs_corr: avg(|d| d.mean_abs_corr),
        domination: avg(|d| d.domination),
        participation: avg(|d| d.participation),
        degenerate_count: per_subspace.iter().map(|d| d.degenerate_count).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateDiagnostics<T> {
    pub eta_proj: T,
    pub eta_corr: T,
    pub eta_eff: T,
    pub mean_abs_corr: T,
    pub domination: T,
    pub participation: T,
    pub degenerate_count: usize,
}
