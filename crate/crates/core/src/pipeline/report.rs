//! CSV rendering and the run summary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{AggregateDiagnostics, SubspaceDiagnostics};
use crate::whitening::EstimatorSnapshot;

use super::config::Method;

pub const CSV_HEADER: &str =
    "step,subspace,method,eta_proj,eta_corr,eta_eff,mean_abs_corr,domination,participation,degenerate_count";

/// Label of the per-step aggregate row.
pub const AGGREGATE_LABEL: &str = "all";

/// Nine significant digits, `%g` style. Negative zero prints as `0`.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One CSV row's numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub eta_proj: f64,
    pub eta_corr: f64,
    pub eta_eff: f64,
    pub mean_abs_corr: f64,
    pub domination: f64,
    pub participation: f64,
    pub degenerate_count: usize,
}

impl From<AggregateDiagnostics<f64>> for DiagnosticsRow {
    fn from(a: AggregateDiagnostics<f64>) -> Self {
        Self {
            eta_proj: a.eta_proj,
            eta_corr: a.eta_corr,
            eta_eff: a.eta_eff,
            mean_abs_corr: a.mean_abs_corr,
            domination: a.domination,
            participation: a.participation,
            degenerate_count: a.degenerate_count,
        }
    }
}

impl DiagnosticsRow {
    pub fn from_subspace(d: &SubspaceDiagnostics<f64>) -> Self {
        Self {
            eta_proj: d.eta_proj,
            eta_corr: d.eta_corr,
            eta_eff: d.eta_eff,
            mean_abs_corr: d.mean_abs_corr,
            domination: d.domination,
            participation: d.participation,
            degenerate_count: d.degenerate_count,
        }
    }

    /// Column-wise mean; degenerate counts are summed.
    pub fn mean_of(rows: &[DiagnosticsRow]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let avg = |f: fn(&DiagnosticsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Some(Self {
            eta_proj: avg(|r| r.eta_proj),
            eta_corr: avg(|r| r.eta_corr),
            eta_eff: avg(|r| r.eta_eff),
            mean_abs_corr: avg(|r| r.mean_abs_corr),
            domination: avg(|r| r.domination),
            participation: avg(|r| r.participation),
            degenerate_count: rows.iter().map(|r| r.degenerate_count).sum(),
        })
    }

    pub fn write_csv(&self, out: &mut String, step: u64, subspace: &str, method: Method) {
        let _ = writeln!(
            out,
            "{step},{subspace},{method},{},{},{},{},{},{},{}",
            format_float(self.eta_proj),
            format_float(self.eta_corr),
            format_float(self.eta_eff),
            format_float(self.mean_abs_corr),
            format_float(self.domination),
            format_float(self.participation),
            self.degenerate_count,
        );
    }
}

/// One subspace's row at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceRow {
    pub subspace: String,
    #[serde(flatten)]
    pub row: DiagnosticsRow,
}

/// All rows of one method at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub subspaces: Vec<SubspaceRow>,
    pub aggregate: DiagnosticsRow,
}

impl StepReport {
    pub fn write_csv(&self, out: &mut String, method: Method) {
        for s in &self.subspaces {
            s.row.write_csv(out, self.step, &s.subspace, method);
        }
        self.aggregate.write_csv(out, self.step, AGGREGATE_LABEL, method);
    }
}

pub fn render_csv(method: Method, steps: &[StepReport]) -> String {
    let mut out = String::with_capacity(128 * steps.len() * 6);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in steps {
        s.write_csv(&mut out, method);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub steps: u64,
    /// Aggregate row of the last step.
    pub final_step: DiagnosticsRow,
    /// Per-subspace rows of the last step.
    pub final_subspaces: Vec<SubspaceRow>,
    /// Mean of the aggregate rows over all steps.
    pub mean_over_steps: DiagnosticsRow,
    /// Mean over all steps, per subspace.
    pub mean_subspaces: Vec<SubspaceRow>,
    /// Degenerate groups summed over all steps and subspaces.
    pub degenerate_groups: usize,
    pub estimators: Vec<EstimatorSnapshot>,
}

impl MethodSummary {
    pub fn from_steps(method: Method, steps: &[StepReport], estimators: Vec<EstimatorSnapshot>) -> Self {
        let last = steps.last().expect("at least one step");
        let aggregates: Vec<DiagnosticsRow> = steps.iter().map(|s| s.aggregate).collect();
        let mut labels: Vec<&str> = Vec::new();
        for s in steps {
            for r in &s.subspaces {
                if !labels.contains(&r.subspace.as_str()) {
                    labels.push(&r.subspace);
                }
            }
        }
        let mean_subspaces = labels
            .iter()
            .filter_map(|label| {
                let rows: Vec<DiagnosticsRow> = steps
                    .iter()
                    .flat_map(|s| s.subspaces.iter().filter(|r| r.subspace == *label).map(|r| r.row))
                    .collect();
                Some(SubspaceRow { subspace: (*label).to_owned(), row: DiagnosticsRow::mean_of(&rows)? })
            })
            .collect();
        Self {
            method,
            steps: steps.len() as u64,
            final_step: last.aggregate,
            final_subspaces: last.subspaces.clone(),
            mean_over_steps: DiagnosticsRow::mean_of(&aggregates).expect("non-empty"),
            mean_subspaces,
            degenerate_groups: aggregates.iter().map(|a| a.degenerate_count).sum(),
            estimators,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub num_steps: u64,
    pub methods: Vec<MethodSummary>,
    /// Not serialized, so that summaries of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunSummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}
