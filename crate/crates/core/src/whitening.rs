//! Per-subspace Mahalanobis whitening with an EMA covariance estimate.
//!
//! Each active reward subspace owns one [`CovarianceEstimator`]. Dimensions that
//! never co-occur never share an estimate, and a dimension present in several
//! subspaces (e.g. `length`) keeps independent statistics in each.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{covariance, symmetric_function, Matrix};
use crate::model::{AdvantageGroup, DimensionRegistry, SubspaceKey};
use crate::scalar::Real;
use crate::stats;

pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_T_WARM: u64 = 5;
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-6;

/// Asymmetry beyond which [`inverse_sqrt`] refuses a matrix.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimator<T> {
    subspace: SubspaceKey,
    sigma_hat: Matrix<T>,
    alpha: T,
    steps_seen: u64,
    t_warm: u64,
}

impl<T: Real> CovarianceEstimator<T> {
    /// `alpha` in (0, 1], `t_warm >= 1`.
    pub fn new(subspace: SubspaceKey, alpha: T, t_warm: u64) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::param("alpha", format!("must lie in (0, 1], got {alpha}")));
        }
        if t_warm == 0 {
            return Err(Error::param("t_warm", "must be at least 1"));
        }
        let d = subspace.len();
        Ok(Self { subspace, sigma_hat: Matrix::zeros(d, d), alpha, steps_seen: 0, t_warm })
    }

    pub fn subspace(&self) -> &SubspaceKey {
        &self.subspace
    }

    pub fn sigma_hat(&self) -> &Matrix<T> {
        &self.sigma_hat
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn steps_seen(&self) -> u64 {
        self.steps_seen
    }

    pub fn t_warm(&self) -> u64 {
        self.t_warm
    }

    /// Whitening is active once `t_warm` updates have completed.
    pub fn is_warm(&self) -> bool {
        self.steps_seen >= self.t_warm
    }

    /// One EMA step toward the population covariance of `samples` (rows are
    /// per-rollout advantage vectors in this subspace). The first update adopts
    /// the batch covariance outright.
    ///
    /// Fewer than two rows is an error and leaves the estimator untouched.
    pub fn ema_update(&mut self, samples: &Matrix<T>) -> Result<()> {
        if samples.cols() != self.subspace.len() {
            return Err(Error::param(
                "samples",
                format!("expected {} columns, got {}", self.subspace.len(), samples.cols()),
            ));
        }
        if samples.rows() < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: samples.rows() });
        }
        let batch_cov = covariance(samples);
        self.sigma_hat = if self.steps_seen == 0 {
            batch_cov
        } else {
            self.sigma_hat.lerp_with(T::one() - self.alpha, &batch_cov, self.alpha)
        };
        self.sigma_hat.symmetrize();
        self.steps_seen += 1;
        Ok(())
    }

    /// Stacks the rows of every group (all must be in this subspace) and updates.
    pub fn update_from_groups<'a>(&mut self, groups: impl IntoIterator<Item = &'a AdvantageGroup<T>>) -> Result<()> {
        let mut rows: Vec<&[T]> = Vec::new();
        for g in groups {
            self.check_subspace(&g.subspace)?;
            rows.extend(g.advantages.iter_rows());
        }
        let d = self.subspace.len();
        let samples = if rows.is_empty() { Matrix::zeros(0, d) } else { Matrix::from_rows(&rows) };
        self.ema_update(&samples)
    }

    pub fn whitening_matrix(&self, eigen_floor: T) -> Result<WhiteningMatrix<T>> {
        Ok(WhiteningMatrix { subspace: self.subspace.clone(), matrix: inverse_sqrt(&self.sigma_hat, eigen_floor)? })
    }

    fn check_subspace(&self, other: &SubspaceKey) -> Result<()> {
        if other != &self.subspace {
            return Err(Error::SubspaceMismatch {
                expected: self.subspace.to_string(),
                actual: other.to_string(),
            });
        }
        Ok(())
    }
}

/// `Σ̂^(-1/2)` for one subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningMatrix<T> {
    pub subspace: SubspaceKey,
    pub matrix: Matrix<T>,
}

impl<T: Real> WhiteningMatrix<T> {
    pub fn apply(&self, adv: &AdvantageGroup<T>) -> Result<AdvantageGroup<T>> {
        if adv.subspace != self.subspace {
            return Err(Error::SubspaceMismatch {
                expected: self.subspace.to_string(),
                actual: adv.subspace.to_string(),
            });
        }
        let mut out = Matrix::zeros(adv.advantages.rows(), adv.advantages.cols());
        for i in 0..adv.advantages.rows() {
            let w = self.matrix.mat_vec(adv.advantages.row(i));
            out.row_mut(i).copy_from_slice(&w);
        }
        Ok(AdvantageGroup::new(adv.prompt_id.clone(), adv.subspace.clone(), out))
    }
}

/// Symmetric inverse square root `U diag(max(λ, floor)^(-1/2)) Uᵀ`.
pub fn inverse_sqrt<T: Real>(sigma: &Matrix<T>, eigen_floor: T) -> Result<Matrix<T>> {
    if !sigma.is_square() {
        return Err(Error::param("sigma", "matrix must be square"));
    }
    if !(eigen_floor.is_finite() && eigen_floor > T::zero()) {
        return Err(Error::param("eigen_floor", format!("must be positive, got {eigen_floor}")));
    }
    if !sigma.all_finite() {
        return Err(Error::param("sigma", "matrix has non-finite entries"));
    }
    let asym = sigma.max_asymmetry();
    if asym > T::lit(SYMMETRY_TOLERANCE) {
        return Err(Error::NotSymmetric(asym.to_f64_lossy()));
    }
    Ok(symmetric_function(sigma, |l| T::one() / l.max(eigen_floor).sqrt()))
}

/// Maps each advantage row through the estimator's whitening matrix, or
/// returns the input unchanged while the estimator is still warming up.
pub fn whiten_group<T: Real>(
    adv: &AdvantageGroup<T>,
    est: &CovarianceEstimator<T>,
    eigen_floor: T,
) -> Result<AdvantageGroup<T>> {
    est.check_subspace(&adv.subspace)?;
    if !est.is_warm() {
        return Ok(adv.clone());
    }
    est.whitening_matrix(eigen_floor)?.apply(adv)
}

/// Per-rollout sum of (whitened) dimension advantages.
pub fn final_advantage<T: Real>(whitened: &AdvantageGroup<T>) -> Vec<T> {
    whitened.advantages.iter_rows().map(|r| r.iter().copied().sum()).collect()
}

/// Mean 0 / population std 1 over all of a step's scalars; constant input maps to zeros.
pub fn batch_normalize<T: Real>(scalars: &[T]) -> Vec<T> {
    stats::standardize(scalars)
}

/// Persisted estimator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSnapshot {
    pub subspace: Vec<String>,
    pub sigma_hat: Vec<Vec<f64>>,
    pub alpha: f64,
    pub steps_seen: u64,
    pub t_warm: u64,
}

impl<T: Real> CovarianceEstimator<T> {
    pub fn to_snapshot(&self, registry: &DimensionRegistry) -> EstimatorSnapshot {
        EstimatorSnapshot {
            subspace: registry.dim_names(&self.subspace),
            sigma_hat: self.sigma_hat.map(|x| x.to_f64_lossy()).to_rows(),
            alpha: self.alpha.to_f64_lossy(),
            steps_seen: self.steps_seen,
            t_warm: self.t_warm,
        }
    }

    /// Restores an estimator. Snapshot dimensions may be listed in any order;
    /// the matrix is permuted into canonical order.
    pub fn from_snapshot(snap: &EstimatorSnapshot, registry: &DimensionRegistry) -> Result<Self> {
        let subspace = registry.subspace(&snap.subspace)?;
        let d = subspace.len();
        if snap.sigma_hat.len() != d || snap.sigma_hat.iter().any(|r| r.len() != d) {
            return Err(Error::param("sigma_hat", format!("expected a {d}x{d} matrix")));
        }
        let src: Vec<usize> = subspace
            .dims()
            .iter()
            .map(|&id| snap.subspace.iter().position(|n| registry.id(n) == Some(id)).unwrap())
            .collect();
        let mut sigma = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                sigma[(i, j)] = T::lit(snap.sigma_hat[src[i]][src[j]]);
            }
        }
        if !sigma.all_finite() {
            return Err(Error::param("sigma_hat", "non-finite entry"));
        }
        if sigma.max_asymmetry() > T::lit(SYMMETRY_TOLERANCE) {
            return Err(Error::NotSymmetric(sigma.max_asymmetry().to_f64_lossy()));
        }
        let mut est = Self::new(subspace, T::lit(snap.alpha), snap.t_warm)?;
        est.sigma_hat = sigma;
        est.steps_seen = snap.steps_seen;
        Ok(est)
    }
}
