//! Experiment driver: generate, gate, normalize, whiten, aggregate, measure.

mod config;
mod method;
mod report;

use std::fs;
use std::path::Path;
use std::time::Instant;

pub use config::{
    AllocationBasis, BatchNormScope, DiagnosticsConfig, ExperimentConfig, MaqConfig, Method, ValidatedConfig,
    WhiteningConfig,
};
pub use method::{method_pipeline, MethodOutput, MethodSettings, MethodState};
pub use report::{
    format_float, render_csv, DiagnosticsRow, MethodSummary, RunSummary, StepReport, SubspaceRow, AGGREGATE_LABEL,
    CSV_HEADER,
};

use crate::diagnostics::{aggregate, grpo_implicit_weights, subspace_diagnostics, SubspaceDiagnostics, SubspaceInputs};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Batch, DimensionRegistry, RolloutGroup, SubspaceKey};
use crate::shaping::apply_gating;

impl ValidatedConfig {
    pub fn method_settings(&self) -> MethodSettings {
        let c = &self.config;
        MethodSettings {
            maq: self.maq,
            scale_smoothing: c.maq.scale_smoothing,
            alpha: c.whitening.alpha,
            t_warm: c.whitening.t_warm,
            eigen_floor: c.whitening.eigen_floor,
            whiten_before_update: c.whitening.whiten_before_update,
            batch_norm_scope: c.whitening.batch_norm_scope,
        }
    }

    /// The step's batch, gated when gating is enabled. Steps count from 1.
    pub fn batch(&self, step: u64) -> Result<Batch<f64>> {
        let batch = self.mixture.make_batch(step, self.config.seed);
        match &self.gating {
            None => Ok(batch),
            Some(policy) => {
                let groups = batch.groups.iter().map(|g| apply_gating(g, policy)).collect::<Result<_>>()?;
                Ok(Batch::new(step, groups))
            }
        }
    }
}

/// Stacks the rows of `rows_of(group)` over every group in `key`.
fn pooled<'a>(
    batch: &'a Batch<f64>,
    key: &SubspaceKey,
    rows_of: impl Fn(usize, &'a RolloutGroup<f64>) -> Vec<&'a [f64]>,
) -> Matrix<f64> {
    let mut rows: Vec<&[f64]> = Vec::new();
    for (i, g) in batch.groups.iter().enumerate() {
        if &g.subspace == key {
            rows.extend(rows_of(i, g));
        }
    }
    if rows.is_empty() {
        Matrix::zeros(0, key.len())
    } else {
        Matrix::from_rows(&rows)
    }
}

/// Per-subspace diagnostics for one method's output on one batch, in
/// first-appearance subspace order.
pub fn step_diagnostics(
    method: Method,
    batch: &Batch<f64>,
    output: &MethodOutput,
) -> Result<Vec<SubspaceDiagnostics<f64>>> {
    let mut out = Vec::new();
    for key in batch.subspaces() {
        let members: Vec<usize> = (0..batch.groups.len()).filter(|&i| batch.groups[i].subspace == key).collect();
        let scalars: Vec<Vec<f64>> = members.iter().map(|&i| output.scalars[i].clone()).collect();
        let (weights, samples, per_dim) = match &output.per_dim {
            None => {
                let w = grpo_implicit_weights(batch, &key)?;
                let s = pooled(batch, &key, |_, g| g.rollouts.iter().map(|r| r.scores.as_slice()).collect());
                (w, s, Vec::new())
            }
            Some(adv) => {
                let s = pooled(batch, &key, |i, _| adv[i].advantages.iter_rows().collect());
                let per_dim: Vec<&Matrix<f64>> = members.iter().map(|&i| &adv[i].advantages).collect();
                (vec![1.0; key.len()], s, per_dim)
            }
        };
        debug_assert!(method == Method::Grpo || output.per_dim.is_some());
        out.push(subspace_diagnostics(&SubspaceInputs {
            subspace: &key,
            weights: &weights,
            correlation_samples: &samples,
            scalars: &scalars,
            per_dim: &per_dim,
        })?);
    }
    Ok(out)
}

/// Builds the CSV rows for one step, choosing the allocation basis.
pub fn step_report(
    step: u64,
    diags: &[SubspaceDiagnostics<f64>],
    registry: &DimensionRegistry,
    basis: AllocationBasis,
) -> StepReport {
    let chosen: Vec<SubspaceDiagnostics<f64>> = diags
        .iter()
        .map(|d| {
            let mut d = d.clone();
            // GRPO has no per-dimension advantages (no cells), so it keeps the summed values
            if basis == AllocationBasis::PerDimension && d.domination_per_dim > 0.0 {
                d.domination = d.domination_per_dim;
                d.participation = d.participation_per_dim;
            }
            d
        })
        .collect();
    let subspaces = chosen
        .iter()
        .map(|d| SubspaceRow { subspace: registry.label(&d.subspace), row: DiagnosticsRow::from_subspace(d) })
        .collect();
    let aggregate = aggregate(&chosen).map(DiagnosticsRow::from).expect("a batch has at least one subspace");
    StepReport { step, subspaces, aggregate }
}

/// Everything a run produced, before it is written to disk.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Per method (config order), one report per step.
    pub reports: Vec<(Method, Vec<StepReport>)>,
    pub states: Vec<MethodState>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn reports_for(&self, m: Method) -> Option<&[StepReport]> {
        self.reports.iter().find(|(x, _)| *x == m).map(|(_, r)| r.as_slice())
    }

    pub fn csv(&self, m: Method) -> Option<String> {
        self.reports_for(m).map(|r| render_csv(m, r))
    }
}

/// Runs every configured method over `num_steps` shared batches.
pub fn run_in_memory(cfg: &ValidatedConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let settings = cfg.method_settings();
    let methods = &cfg.config.methods;
    let mut states: Vec<MethodState> = methods.iter().map(|&m| MethodState::new(m)).collect();
    let mut reports: Vec<(Method, Vec<StepReport>)> =
        methods.iter().map(|&m| (m, Vec::with_capacity(cfg.config.num_steps as usize))).collect();

    for step in 1..=cfg.config.num_steps {
        let batch = cfg.batch(step)?;
        for (state, (method, rep)) in states.iter_mut().zip(reports.iter_mut()) {
            let output = method_pipeline(*method, &batch, state, &settings)?;
            let diags = step_diagnostics(*method, &batch, &output)?;
            rep.push(step_report(step, &diags, &cfg.registry, cfg.config.diagnostics.allocation_basis));
        }
    }

    let summaries = reports
        .iter()
        .zip(&states)
        .map(|((m, r), s)| MethodSummary::from_steps(*m, r, s.snapshots(&cfg.registry)))
        .collect();
    let summary = RunSummary {
        seed: cfg.config.seed,
        num_steps: cfg.config.num_steps,
        methods: summaries,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { reports, states, summary })
}

/// Runs the experiment and writes `<method>.csv`, `summary.json` and
/// `config_resolved.json` into the configured output directory.
pub fn run_experiment(cfg: &ValidatedConfig) -> Result<RunSummary> {
    let dir = cfg.config.output_dir.as_path();
    prepare_dir(dir)?;
    let out = run_in_memory(cfg)?;
    for (m, r) in &out.reports {
        write(dir, &format!("{m}.csv"), &render_csv(*m, r))?;
    }
    write(dir, "summary.json", &out.summary.to_json_pretty())?;
    write(dir, "config_resolved.json", &cfg.config.to_json_pretty())?;
    Ok(out.summary)
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Io { path, source: e })
}
