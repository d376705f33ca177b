//! Experiment configuration (JSON) and its validation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DimensionRegistry, DEFAULT_DIMENSIONS};
use crate::normalizers::{MaqParams, MarginRule};
use crate::shaping::{GatingConfig, GatingPolicy};
use crate::synthetic::{default_paper_mixture, Mixture, TaskSpec};
use crate::whitening::{DEFAULT_ALPHA, DEFAULT_EIGEN_FLOOR, DEFAULT_T_WARM};

/// Advantage construction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Raw-reward sum, group-standardized.
    Grpo,
    /// Per-dimension Z-score, sum, batch normalization.
    Gdpo,
    /// MAQ, sum, batch normalization.
    MaqOnly,
    /// Z-score, subspace whitening, sum, batch normalization.
    WhitenOnly,
    /// MAQ, subspace whitening, sum, batch normalization.
    Rdpo,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Grpo, Method::Gdpo, Method::MaqOnly, Method::WhitenOnly, Method::Rdpo];

    pub fn name(self) -> &'static str {
        match self {
            Method::Grpo => "grpo",
            Method::Gdpo => "gdpo",
            Method::MaqOnly => "maq_only",
            Method::WhitenOnly => "whiten_only",
            Method::Rdpo => "rdpo",
        }
    }

    pub fn uses_maq(self) -> bool {
        matches!(self, Method::MaqOnly | Method::Rdpo)
    }

    pub fn uses_whitening(self) -> bool {
        matches!(self, Method::WhitenOnly | Method::Rdpo)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("methods", format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaqConfig {
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub margin: MarginRule,
    /// `None`: σ_global from each batch alone. `Some(a)`: EMA of per-batch
    /// scales with weight `a` on the newest batch.
    #[serde(default)]
    pub scale_smoothing: Option<f64>,
}

impl Default for MaqConfig {
    fn default() -> Self {
        Self { beta: 1.0, margin: MarginRule::HalfRank, scale_smoothing: None }
    }
}

/// Scope of the final batch-wise normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchNormScope {
    /// All scalars of the step together.
    #[default]
    Batch,
    /// Each task's scalars separately.
    Task,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhiteningConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_t_warm")]
    pub t_warm: u64,
    #[serde(default = "default_eigen_floor")]
    pub eigen_floor: f64,
    /// Whiten with the estimate from before this step's update.
    #[serde(default)]
    pub whiten_before_update: bool,
    #[serde(default)]
    pub batch_norm_scope: BatchNormScope,
}

impl Default for WhiteningConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            t_warm: DEFAULT_T_WARM,
            eigen_floor: DEFAULT_EIGEN_FLOOR,
            whiten_before_update: false,
            batch_norm_scope: BatchNormScope::Batch,
        }
    }
}

/// Which advantages the domination/participation columns describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationBasis {
    /// Final per-rollout scalar advantages.
    #[default]
    Summed,
    /// Per-dimension advantages, averaged over dimensions (GRPO falls back to summed).
    PerDimension,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default)]
    pub allocation_basis: AllocationBasis,
}

fn one() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_t_warm() -> u64 {
    DEFAULT_T_WARM
}
fn default_eigen_floor() -> f64 {
    DEFAULT_EIGEN_FLOOR
}
fn default_dimensions() -> Vec<String> {
    DEFAULT_DIMENSIONS.iter().map(|s| (*s).to_owned()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub num_steps: u64,
    pub methods: Vec<Method>,
    #[serde(default = "default_dimensions")]
    pub dimensions: Vec<String>,
    #[serde(default)]
    pub maq: MaqConfig,
    #[serde(default)]
    pub whitening: WhiteningConfig,
    /// `null` disables gating.
    #[serde(default)]
    pub gating: Option<GatingConfig>,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    pub mixture: Vec<TaskSpec>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Four-task mixture, all methods, G = 8, 16 prompts per task, 100 steps.
    pub fn paper_default() -> Self {
        Self {
            seed: 20_240_601,
            num_steps: 100,
            methods: Method::ALL.to_vec(),
            dimensions: default_dimensions(),
            maq: MaqConfig::default(),
            whitening: WhiteningConfig::default(),
            gating: Some(GatingConfig::paper_default()),
            diagnostics: DiagnosticsConfig::default(),
            mixture: default_paper_mixture(),
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::config(format!("line {} column {}", e.line(), e.column()), e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<ValidatedConfig> {
        if self.num_steps == 0 {
            return Err(Error::config("num_steps", "must be positive"));
        }
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::config(format!("methods[{i}]"), format!("duplicate method `{m}`")));
            }
        }
        let registry =
            DimensionRegistry::new(&self.dimensions).map_err(|e| Error::config("dimensions", e.to_string()))?;
        let maq = MaqParams::new(self.maq.beta)
            .map_err(|e| Error::config("maq.beta", e.to_string()))?
            .with_margin(self.maq.margin);
        if let Some(a) = self.maq.scale_smoothing {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::config("maq.scale_smoothing", "must lie in (0, 1]"));
            }
        }
        let w = &self.whitening;
        if !(w.alpha > 0.0 && w.alpha <= 1.0) {
            return Err(Error::config("whitening.alpha", "must lie in (0, 1]"));
        }
        if w.t_warm < 1 {
            return Err(Error::config("whitening.t_warm", "must be at least 1"));
        }
        if !(w.eigen_floor.is_finite() && w.eigen_floor > 0.0) {
            return Err(Error::config("whitening.eigen_floor", "must be positive"));
        }
        let mixture = Mixture::resolve(&self.mixture, &registry)?;
        let gating = match &self.gating {
            None => None,
            Some(g) => {
                let policy = g.resolve(&registry)?;
                for t in &mixture.tasks {
                    policy.check_task(&t.spec.task_id, &t.subspace).map_err(|e| match e {
                        Error::MissingPolicy(task) => {
                            Error::config("gating.tasks", format!("no rule for mixture task `{task}`"))
                        }
                        other => other,
                    })?;
                }
                Some(policy)
            }
        };
        Ok(ValidatedConfig { config: self.clone(), registry, mixture, gating, maq })
    }
}

/// A config whose mixture and gating rules have been resolved.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub config: ExperimentConfig,
    pub registry: DimensionRegistry,
    pub mixture: Mixture,
    pub gating: Option<GatingPolicy<f64>>,
    pub maq: MaqParams<f64>,
}
