//! Mixed-reward advantage construction for group-relative policy optimization.
//!
//! Rollouts from heterogeneous tasks carry reward vectors over different
//! subsets of reward dimensions. This crate turns such batches into scalar
//! per-rollout advantages and measures how much information the aggregation
//! keeps:
//!
//! - [`normalizers`]: raw-sum GRPO, per-dimension Z-score, and magnitude-aware
//!   quantile (MAQ) normalization.
//! - [`whitening`]: per-subspace EMA covariance and Mahalanobis whitening.
//! - [`diagnostics`]: projection / correlation / effective efficiency,
//!   advantage domination and rollout participation.
//! - [`shaping`]: length reward and conditional gating of auxiliary rewards.
//! - [`synthetic`]: Gaussian-copula batch generator.
//! - [`pipeline`]: the experiment driver behind the `rdpo` binary.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod normalizers;
pub mod pipeline;
pub mod scalar;
pub mod shaping;
pub mod stats;
pub mod synthetic;
pub mod whitening;

pub use error::{Error, Result};
pub use model::{
    AdvantageGroup, Batch, DimensionId, DimensionRegistry, RewardVector, RolloutGroup, SubspaceKey, DEFAULT_DIMENSIONS,
};
pub use normal::inverse_normal_cdf;
pub use scalar::Real;

pub type MatrixF64 = linalg::Matrix<f64>;
pub type MatrixF32 = linalg::Matrix<f32>;
pub type BatchF64 = Batch<f64>;
pub type BatchF32 = Batch<f32>;
pub type RolloutGroupF64 = RolloutGroup<f64>;
pub type RolloutGroupF32 = RolloutGroup<f32>;
pub type AdvantageGroupF64 = AdvantageGroup<f64>;
pub type AdvantageGroupF32 = AdvantageGroup<f32>;
pub type CovarianceEstimatorF64 = whitening::CovarianceEstimator<f64>;
pub type CovarianceEstimatorF32 = whitening::CovarianceEstimator<f32>;
pub type MaqParamsF64 = normalizers::MaqParams<f64>;
pub type MaqParamsF32 = normalizers::MaqParams<f32>;
pub type CorrelationMatrixF64 = diagnostics::CorrelationMatrix<f64>;
pub type CorrelationMatrixF32 = diagnostics::CorrelationMatrix<f32>;
