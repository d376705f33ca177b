//! Module invariants as deterministic property checks, shared by the
//! `properties` test target and the acceptance runner.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};

use rdpo::diagnostics::{
    domination, eta_corr, eta_proj, participation, pearson_matrix, CorrelationMatrix,
};
use rdpo::linalg::{covariance, Matrix};
use rdpo::model::{validate_batch, Batch, DimensionId, DimensionRegistry, RolloutGroup, SubspaceKey};
use rdpo::normalizers::{
    compute_global_scale, gdpo_zscore, grpo_aggregate, maq_group, maq_normalize, MaqParams,
};
use rdpo::pipeline::{
    method_pipeline, run_in_memory, step_diagnostics, ExperimentConfig, Method, MethodSettings, MethodState,
    CSV_HEADER,
};
use rdpo::shaping::{apply_gating, length_reward, GatingConfig, LengthRewardParams};
use rdpo::stats;
use rdpo::synthetic::{
    default_paper_mixture, ContinuousParams, DimensionSpec, Family, Mixture, TaskSpec,
};
use rdpo::whitening::{
    batch_normalize, final_advantage, inverse_sqrt, whiten_group, CovarianceEstimator, EstimatorSnapshot,
};
use rdpo::inverse_normal_cdf;

pub type Check = fn() -> Result<(), String>;

/// Every invariant, labelled `module: property`.
pub const ALL: &[(&str, Check)] = &[
    ("core_model: validated batches flow through every operation", valid_batch_accepted_downstream),
    ("core_model: subspace keys are canonical under permutation", subspace_key_canonical),
    ("normalizers: MAQ preserves ranks and ties", maq_rank_preservation),
    ("normalizers: MAQ outputs are bounded", maq_boundedness),
    ("normalizers: MAQ negation symmetry", maq_negation_symmetry),
    ("normalizers: MAQ scale robustness", maq_scale_robustness),
    ("normalizers: MAQ outlier compression", maq_outlier_compression),
    ("normalizers: Z-score columns are standardized", gdpo_columns_standardized),
    ("normalizers: GRPO equals GDPO under equal stds", grpo_matches_gdpo_equal_stds),
    ("whitening: exact-fit whitening oracle", whitening_oracle),
    ("whitening: identity covariance is a no-op", identity_whitening_exact),
    ("whitening: EMA keeps the estimate symmetric", ema_symmetry_preserved),
    ("whitening: subspace estimators are isolated", subspace_isolation),
    ("whitening: eigen floor keeps outputs finite", eigen_floor_safety),
    ("whitening: EMA converges to a stationary covariance", ema_convergence),
    ("diagnostics: eta_proj is scale invariant", eta_proj_scale_invariant),
    ("diagnostics: eta_proj is 1 iff weights are equal", eta_proj_one_iff_equal),
    ("diagnostics: eta_corr bounds", eta_corr_bounds),
    ("diagnostics: domination and participation bounds", allocation_bounds),
    ("diagnostics: allocation depends only on mass shares", allocation_invariance),
    ("diagnostics: two-reward eta_corr closed form", two_reward_consistency),
    ("reward_shaping: gating never raises the gated reward", gating_monotone),
    ("reward_shaping: gating never touches the guard", gating_guard_unchanged),
    ("reward_shaping: length reward continuity and monotonicity", length_reward_shape),
    ("reward_shaping: gating is idempotent", gating_idempotent),
    ("synthetic_bench: generator is a pure function of its inputs", generator_determinism),
    ("synthetic_bench: marginal fidelity (KS < 0.03)", marginal_fidelity),
    ("synthetic_bench: copula monotonicity in target rho", copula_monotonicity),
    ("pipeline_cli: methods share one batch per step", shared_batch),
    ("pipeline_cli: final advantages have unit batch moments", final_advantages_unit_moments),
    ("pipeline_cli: CSV shape is a function of config", csv_shape),
];

pub fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng).run(&strategy, test).map_err(|e| e.to_string())
}

pub fn fail(msg: impl Into<String>) -> TestCaseError {
    TestCaseError::fail(msg.into())
}

pub fn reg() -> DimensionRegistry {
    DimensionRegistry::default()
}

pub fn key(names: &[&str]) -> SubspaceKey {
    reg().subspace(names).unwrap()
}

/// Finite values with frequent exact ties.
pub fn group_values(max_g: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u8..3, -5.0..5.0f64), 2..=max_g)
        .prop_map(|v| v.into_iter().map(|(k, x)| if k == 0 { x.round() } else { x }).collect())
}

pub fn normal_task(id: &str, dims: &[&str], corr: Vec<Vec<f64>>, prompts: usize, g: usize) -> TaskSpec {
    let normal = ContinuousParams { location: 0.0, scale: 1.0, skew: 0.0, clip: None };
    TaskSpec {
        task_id: id.into(),
        dims: dims.iter().map(|d| DimensionSpec { dim: (*d).into(), family: Family::Continuous(normal) }).collect(),
        target_corr: corr,
        prompts_per_step: prompts,
        group_size: g,
    }
}

/// All rollouts of one step of a single-task mixture, stacked.
pub fn samples(task: &TaskSpec, step: u64, seed: u64) -> Matrix<f64> {
    let mix = Mixture::resolve(std::slice::from_ref(task), &reg()).unwrap();
    let batch = mix.make_batch(step, seed);
    let rows: Vec<&[f64]> = batch.groups.iter().flat_map(|g| g.rollouts.iter().map(|r| r.scores.as_slice())).collect();
    Matrix::from_rows(&rows)
}

pub fn small_config(methods: Vec<Method>, steps: u64, prompts: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::paper_default();
    c.methods = methods;
    c.num_steps = steps;
    c.seed = seed;
    for t in &mut c.mixture {
        t.prompts_per_step = prompts;
    }
    c
}

// ---- core_model ----

pub fn random_group() -> impl Strategy<Value = (Vec<DimensionId>, Vec<Vec<f64>>)> {
    let ids: Vec<DimensionId> = (0..6).map(DimensionId).collect();
    (prop::sample::subsequence(ids, 1..=3), 2usize..6).prop_flat_map(|(dims, g)| {
        let d = dims.len();
        (Just(dims), prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), g))
    })
}

pub fn valid_batch_accepted_downstream() -> Result<(), String> {
    check(48, prop::collection::vec(random_group(), 1..5), |groups| {
        let groups: Vec<RolloutGroup<f64>> = groups
            .into_iter()
            .enumerate()
            .map(|(i, (dims, rows))| {
                RolloutGroup::from_rows(format!("p{i}"), "t", SubspaceKey::new(dims).unwrap(), &rows)
            })
            .collect();
        let batch = Batch::new(1, groups);
        prop_assert!(validate_batch(&batch).is_empty());
        let scale = compute_global_scale(&batch);
        for g in &batch.groups {
            grpo_aggregate(g);
            gdpo_zscore(g);
            maq_group(g, &scale, &MaqParams::default()).map_err(|e| fail(e.to_string()))?;
        }
        let settings = MethodSettings { t_warm: 1, ..MethodSettings::default() };
        for m in Method::ALL {
            let mut state = MethodState::new(m);
            for _ in 0..2 {
                let out = method_pipeline(m, &batch, &mut state, &settings).map_err(|e| fail(format!("{m}: {e}")))?;
                prop_assert!(out.scalars.iter().flatten().all(|x| x.is_finite()));
                step_diagnostics(m, &batch, &out).map_err(|e| fail(format!("{m} diagnostics: {e}")))?;
            }
        }
        Ok(())
    })
}

pub fn subspace_key_canonical() -> Result<(), String> {
    let ids: Vec<DimensionId> = (0..6).map(DimensionId).collect();
    let strat = prop::sample::subsequence(ids, 1..=6).prop_flat_map(|s| (Just(s.clone()), Just(s).prop_shuffle()));
    check(128, strat, |(sorted, shuffled)| {
        let a = SubspaceKey::new(sorted.clone()).unwrap();
        let b = SubspaceKey::new(shuffled).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.dims(), sorted.as_slice());
        Ok(())
    })
}

// ---- normalizers ----

pub fn maq_params() -> impl Strategy<Value = (f64, f64)> {
    (0.01..10.0f64, 0.1..5.0f64)
}

pub fn maq_rank_preservation() -> Result<(), String> {
    check(256, (group_values(12), maq_params()), |(v, (sigma, beta))| {
        let a = maq_normalize(&v, sigma, &MaqParams::new(beta).unwrap()).unwrap();
        for i in 0..v.len() {
            for j in 0..v.len() {
                if a[i] < a[j] {
                    prop_assert!(v[i] < v[j], "A{i} < A{j} but r{i} >= r{j}");
                }
                if v[i] == v[j] {
                    prop_assert_eq!(a[i].to_bits(), a[j].to_bits());
                }
                if v[i] < v[j] {
                    prop_assert!(a[i] <= a[j]);
                }
            }
        }
        Ok(())
    })
}

pub fn maq_boundedness() -> Result<(), String> {
    check(256, (group_values(16), maq_params(), 0usize..16, 1.0..1e9f64), |(mut v, (sigma, beta), at, big)| {
        let n = v.len();
        v[at % n] = big;
        let g = n as f64;
        let lo = inverse_normal_cdf(1.0 / (2.0 * g)).unwrap();
        let hi = inverse_normal_cdf(1.0 - 1.0 / (2.0 * g)).unwrap();
        for x in maq_normalize(&v, sigma, &MaqParams::new(beta).unwrap()).unwrap() {
            prop_assert!(x >= lo && x <= hi, "{x} outside [{lo}, {hi}]");
        }
        Ok(())
    })
}

pub fn maq_negation_symmetry() -> Result<(), String> {
    check(256, (group_values(12), maq_params()), |(v, (sigma, beta))| {
        let p = MaqParams::new(beta).unwrap();
        let a = maq_normalize(&v, sigma, &p).unwrap();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let b = maq_normalize(&neg, sigma, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x + y).abs() < 1e-10, "{x} vs {y}");
        }
        Ok(())
    })?;
    // uniform spacing in any order
    let strat = (2usize..12, -3.0..3.0f64, 0.1..2.0f64)
        .prop_flat_map(|(g, a, d)| (Just((0..g).map(|k| a + d * k as f64).collect::<Vec<_>>()).prop_shuffle(), Just(d)));
    check(128, strat, |(v, d)| {
        let p = MaqParams::default();
        let a = maq_normalize(&v, d, &p).unwrap();
        let mean: f64 = a.iter().sum::<f64>() / a.len() as f64;
        prop_assert!(mean.abs() < 1e-12);
        let mut sorted = a.clone();
        sorted.sort_by(f64::total_cmp);
        let g = sorted.len();
        for k in 0..g {
            prop_assert!((sorted[k] + sorted[g - 1 - k]).abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn maq_scale_robustness() -> Result<(), String> {
    check(256, (group_values(12), maq_params(), -20i32..20, 1e-3..1e3f64), |(v, (sigma, beta), k, c)| {
        let p = MaqParams::new(beta).unwrap();
        let base = maq_normalize(&v, sigma, &p).unwrap();
        let pow2 = 2f64.powi(k);
        let scaled: Vec<f64> = v.iter().map(|x| x * pow2).collect();
        let exact = maq_normalize(&scaled, sigma * pow2, &p).unwrap();
        for (a, b) in base.iter().zip(&exact) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let approx = maq_normalize(&scaled, sigma * c, &p).unwrap();
        for (a, b) in base.iter().zip(&approx) {
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b} at c = {c}");
        }
        Ok(())
    })
}

pub fn maq_outlier_compression() -> Result<(), String> {
    check(64, (3usize..12, prop::collection::vec(0.0..1.0f64, 12)), |(g, fill)| {
        let p = MaqParams::default();
        let bound = inverse_normal_cdf(1.0 - 1.0 / (2.0 * g as f64)).unwrap();
        let mut prev_z = f64::NEG_INFINITY;
        for m in [1e2, 1e4, 1e8, 1e12] {
            let mut v: Vec<f64> = fill[..g - 1].to_vec();
            v[0] = 0.0;
            v[1] = 1.0;
            v.push(m);
            let a = maq_normalize(&v, 1.0, &p).unwrap();
            prop_assert!((a[g - 1] - bound).abs() < 1e-15, "outlier advantage {} vs bound {bound}", a[g - 1]);
            let z = stats::standardize(&v);
            prop_assert!(z[g - 1] > prev_z - 1e-12);
            prev_z = z[g - 1];
            if m >= 1e8 {
                prop_assert!(domination(&a).value < domination(&z).value);
            }
        }
        // the Z-score outlier approaches sqrt(G - 1), beyond the MAQ bound
        prop_assert!((prev_z - ((g - 1) as f64).sqrt()).abs() < 1e-6);
        prop_assert!(prev_z > bound);
        Ok(())
    })
}

pub fn gdpo_columns_standardized() -> Result<(), String> {
    let strat = (2usize..10, 1usize..4).prop_flat_map(|(g, d)| {
        prop::collection::vec(prop::collection::vec((0u8..4, -5.0..5.0f64), d), g)
    });
    check(256, strat, |rows| {
        let rows: Vec<Vec<f64>> =
            rows.into_iter().map(|r| r.into_iter().map(|(k, x)| if k == 0 { 1.5 } else { x }).collect()).collect();
        let d = rows[0].len();
        let names = &["math", "code", "length"][..d];
        let group = RolloutGroup::from_rows("p", "t", key(names), &rows);
        let adv = gdpo_zscore(&group);
        for k in 0..d {
            let col = group.column(k);
            let out = adv.advantages.column(k);
            let constant = col.iter().all(|x| *x == col[0]);
            if constant {
                prop_assert!(out.iter().all(|x| *x == 0.0));
            } else {
                prop_assert!(stats::mean(&out).abs() < 1e-10);
                prop_assert!((stats::pop_std(&out) - 1.0).abs() < 1e-10);
            }
        }
        Ok(())
    })
}

pub fn grpo_matches_gdpo_equal_stds() -> Result<(), String> {
    // every column is a permutation of one base vector, so all stds are equal
    let strat = (3usize..10).prop_flat_map(|g| {
        prop::collection::vec(-2.0..2.0f64, g)
            .prop_flat_map(|base| (Just(base.clone()).prop_shuffle(), Just(base.clone()).prop_shuffle(), Just(base)))
    });
    check(256, strat, |(a, b, c)| {
        let rows: Vec<[f64; 3]> = (0..a.len()).map(|j| [a[j], b[j], c[j]]).collect();
        let group = RolloutGroup::from_rows("p", "t", key(&["rubrics", "rm", "length"]), &rows);
        let grpo = grpo_aggregate(&group).advantages;
        let gdpo = batch_normalize(&final_advantage(&gdpo_zscore(&group)));
        for (x, y) in grpo.iter().zip(&gdpo) {
            prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        Ok(())
    })
}

// ---- whitening ----

pub fn whitening_oracle() -> Result<(), String> {
    check(6, any::<u64>(), |seed| {
        let task = normal_task("pair", &["math", "length"], vec![vec![1.0, 0.9], vec![0.9, 1.0]], 100, 100);
        let x = samples(&task, 1, seed);
        prop_assert_eq!(x.rows(), 10_000);
        let w = inverse_sqrt(&covariance(&x), 1e-6).unwrap();
        let rows: Vec<Vec<f64>> = x.iter_rows().map(|r| w.mat_vec(r)).collect();
        let y = Matrix::from_rows(&rows);
        let rho = pearson_matrix(&key(&["math", "length"]), &y).unwrap().rho[(0, 1)];
        prop_assert!(rho.abs() < 0.02, "|rho| = {}", rho.abs());
        for v in covariance(&y).to_rows().iter().enumerate().map(|(i, r)| r[i]) {
            prop_assert!((0.95..=1.05).contains(&v), "variance {v}");
        }
        Ok(())
    })
}

pub fn identity_snapshot(names: &[&str]) -> CovarianceEstimator<f64> {
    let d = names.len();
    let snap = EstimatorSnapshot {
        subspace: names.iter().map(|s| (*s).to_owned()).collect(),
        sigma_hat: Matrix::<f64>::identity(d).to_rows(),
        alpha: 0.1,
        steps_seen: 10,
        t_warm: 5,
    };
    CovarianceEstimator::from_snapshot(&snap, &reg()).unwrap()
}

pub fn identity_whitening_exact() -> Result<(), String> {
    let strat = (1usize..4).prop_flat_map(|d| (Just(d), prop::collection::vec(prop::collection::vec(-1e3..1e3f64, d), 2..10)));
    check(128, strat, |(d, rows)| {
        let names = &["rubrics", "rm", "length"][..d];
        let est = identity_snapshot(names);
        let adv = rdpo::AdvantageGroup::new("p", key(names), Matrix::from_rows(&rows));
        let out = whiten_group(&adv, &est, 1e-6).unwrap();
        for (a, b) in out.advantages.as_slice().iter().zip(adv.advantages.as_slice()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
        Ok(())
    })
}

pub fn sample_matrix(d: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, d), 2..30).prop_map(|r| Matrix::from_rows(&r))
}

pub fn ema_symmetry_preserved() -> Result<(), String> {
    check(96, (0.01..=1.0f64, prop::collection::vec(sample_matrix(3), 1..12)), |(alpha, batches)| {
        let mut est = CovarianceEstimator::new(key(&["rubrics", "rm", "length"]), alpha, 5).unwrap();
        for (t, b) in batches.iter().enumerate() {
            est.ema_update(b).unwrap();
            prop_assert_eq!(est.steps_seen(), t as u64 + 1);
            let s = est.sigma_hat();
            prop_assert!(s.max_asymmetry() <= 1e-12);
            prop_assert!((0..3).all(|i| s[(i, i)] >= 0.0));
        }
        Ok(())
    })
}

pub fn subspace_isolation() -> Result<(), String> {
    check(16, any::<u64>(), |seed| {
        let specs = default_paper_mixture();
        let mix = Mixture::resolve(&specs, &reg()).unwrap();
        let settings = MethodSettings::default();
        let mut state = MethodState::new(Method::Rdpo);
        method_pipeline(Method::Rdpo, &mix.make_batch(1, seed), &mut state, &settings).unwrap();
        let before = state.estimators.clone();
        // a batch holding only math+length groups
        let math_only = Mixture::resolve(&specs[..1], &reg()).unwrap();
        method_pipeline(Method::Rdpo, &math_only.make_batch(2, seed), &mut state, &settings).unwrap();
        let ml = key(&["math", "length"]);
        for (k, est) in &state.estimators {
            if *k == ml {
                prop_assert_eq!(est.steps_seen(), 2);
                prop_assert!(est.sigma_hat() != before[k].sigma_hat());
            } else {
                prop_assert_eq!(est, &before[k]);
            }
        }
        Ok(())
    })
}

pub fn eigen_floor_safety() -> Result<(), String> {
    // columns: independent, duplicated, negated, constant, or scaled copies
    let strat = (sample_matrix(1), prop::collection::vec(0u8..5, 2), -1e3..1e3f64);
    check(256, strat, |(base, kinds, c)| {
        let n = base.rows();
        let mut cols = vec![base.column(0)];
        for k in kinds {
            let src = &cols[0];
            cols.push(match k {
                0 => src.iter().map(|x| x.sin() * 3.0).collect(),
                1 => src.clone(),
                2 => src.iter().map(|x| -x).collect(),
                3 => vec![c; n],
                _ => src.iter().map(|x| x * c).collect(),
            });
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|i| cols.iter().map(|col| col[i]).collect()).collect();
        let samples = Matrix::from_rows(&rows);
        let names = ["rubrics", "rm", "length"];
        let mut est = CovarianceEstimator::new(key(&names), 0.1, 1).unwrap();
        est.ema_update(&samples).unwrap();
        let adv = rdpo::AdvantageGroup::new("p", key(&names), samples);
        let out = whiten_group(&adv, &est, 1e-6).map_err(|e| fail(e.to_string()))?;
        prop_assert!(out.advantages.all_finite());
        Ok(())
    })
}

pub fn ema_convergence() -> Result<(), String> {
    let corr = vec![vec![1.0, 0.6, 0.2], vec![0.6, 1.0, -0.3], vec![0.2, -0.3, 1.0]];
    let truth = Matrix::from_rows(&corr);
    check(4, any::<u64>(), move |seed| {
        let task = normal_task("tri", &["rubrics", "rm", "length"], corr.clone(), 125, 8);
        let k = key(&["rubrics", "rm", "length"]);
        let mut est = CovarianceEstimator::new(k, 0.1, 5).unwrap();
        // spec order (rubrics, rm, length) is also canonical order
        let mut first = 0.0;
        for step in 1..=200 {
            est.ema_update(&samples(&task, step, seed)).unwrap();
            if step == 1 {
                first = est.sigma_hat().sub(&truth).frobenius_norm();
            }
        }
        let last = est.sigma_hat().sub(&truth).frobenius_norm();
        prop_assert!(last < 0.05, "final Frobenius distance {last}");
        prop_assert!(last < first, "{last} !< {first}");
        Ok(())
    })
}

// ---- diagnostics ----

pub fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 1..8).prop_filter("nonzero", |w| w.iter().any(|x| x.abs() > 1e-3))
}

pub fn eta_proj_scale_invariant() -> Result<(), String> {
    let c = prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64];
    check(256, (weights(), c), |(w, c)| {
        let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
        let a = eta_proj(&w).unwrap();
        let b = eta_proj(&scaled).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-15).contains(&a));
        Ok(())
    })
}

pub fn eta_proj_one_iff_equal() -> Result<(), String> {
    let c = prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64];
    check(128, (1usize..8, c), |(n, c)| {
        prop_assert!((eta_proj(&vec![c; n]).unwrap() - 1.0).abs() < 1e-12);
        Ok(())
    })?;
    let unequal = prop::collection::vec(-5i32..=5, 2..8)
        .prop_filter("not all equal", |v| v.iter().any(|x| *x != v[0]))
        .prop_filter("nonzero", |v| v.iter().any(|x| *x != 0));
    check(256, unequal, |v| {
        let w: Vec<f64> = v.iter().map(|x| f64::from(*x)).collect();
        prop_assert!(eta_proj(&w).unwrap() < 1.0 - 1e-12);
        Ok(())
    })
}

pub fn correlation_samples() -> impl Strategy<Value = Matrix<f64>> {
    (2usize..=3).prop_flat_map(|d| {
        (prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), 3..40), prop::collection::vec(-1.0..1.0f64, d))
            .prop_map(|(rows, mix)| {
                // add a shared factor so correlations are nonzero
                let rows: Vec<Vec<f64>> = rows
                    .into_iter()
                    .map(|r| {
                        let f = r[0];
                        r.iter().zip(&mix).map(|(x, m)| x + m * f).collect()
                    })
                    .collect();
                Matrix::from_rows(&rows)
            })
    })
}

pub fn subspace_for(d: usize) -> SubspaceKey {
    key(&["rubrics", "rm", "length"][..d])
}

pub fn eta_corr_bounds() -> Result<(), String> {
    check(256, correlation_samples(), |x| {
        let n = x.cols();
        let corr = pearson_matrix(&subspace_for(n), &x).unwrap();
        let e = eta_corr(&corr);
        prop_assert!(e >= 1.0 / n as f64 - 1e-12 && e <= 1.0 + 1e-15, "eta_corr {e}");
        let offdiag_zero = (0..n).all(|i| (0..n).all(|j| i == j || corr.rho[(i, j)] == 0.0));
        prop_assert_eq!(offdiag_zero, e == 1.0);
        let id = CorrelationMatrix::new(subspace_for(n), Matrix::<f64>::identity(n)).unwrap();
        prop_assert_eq!(eta_corr(&id), 1.0);
        Ok(())
    })
}

pub fn advantages() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, 2..16).prop_filter("some mass", |v| v.iter().any(|x| x.abs() > 1e-6))
}

pub fn allocation_bounds() -> Result<(), String> {
    check(256, advantages(), |a| {
        let g = a.len() as f64;
        prop_assert!(domination(&a).value >= 1.0 / g - 1e-15);
        prop_assert!(domination(&a).value <= 1.0 + 1e-15);
        let p = participation(&a).value;
        prop_assert!(p > 0.0 && p <= 1.0);
        Ok(())
    })?;
    check(128, (0.1..5.0f64, prop::collection::vec(any::<bool>(), 2..16)), |(m, signs)| {
        let a: Vec<f64> = signs.iter().map(|s| if *s { m } else { -m }).collect();
        prop_assert!((participation(&a).value - 1.0).abs() < 1e-12);
        prop_assert!((domination(&a).value - 1.0 / a.len() as f64).abs() < 1e-12);
        Ok(())
    })?;
    let unequal = prop::collection::vec(1i32..=6, 2..16).prop_filter("unequal", |v| v.iter().any(|x| *x != v[0]));
    check(128, unequal, |v| {
        let a: Vec<f64> = v.iter().map(|x| f64::from(*x)).collect();
        prop_assert!(participation(&a).value < 1.0 - 1e-12);
        Ok(())
    })
}

pub fn allocation_invariance() -> Result<(), String> {
    let c = prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64];
    check(256, (advantages(), c, prop::collection::vec(any::<bool>(), 16)), |(a, c, flips)| {
        let b: Vec<f64> = a.iter().zip(&flips).map(|(x, f)| if *f { -x * c } else { x * c }).collect();
        prop_assert!((domination(&a).value - domination(&b).value).abs() < 1e-12);
        prop_assert!((participation(&a).value - participation(&b).value).abs() < 1e-12);
        Ok(())
    })
}

pub fn two_reward_consistency() -> Result<(), String> {
    let strat = correlation_samples().prop_filter("two columns", |m| m.cols() == 2);
    check(256, strat, |x| {
        let corr = pearson_matrix(&subspace_for(2), &x).unwrap();
        let rho = corr.rho[(0, 1)];
        prop_assert!((eta_corr(&corr) - 1.0 / (1.0 + rho.abs())).abs() < 1e-12);
        Ok(())
    })
}

// ---- reward_shaping ----

pub fn gated_groups() -> impl Strategy<Value = RolloutGroup<f64>> {
    let writing = prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 3), 2..8)
        .prop_map(|rows| RolloutGroup::from_rows("p", "writing", key(&["rubrics", "rm", "length"]), &rows));
    let math = prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64], 2), 2..8)
        .prop_map(|rows| RolloutGroup::from_rows("p", "math", key(&["math", "length"]), &rows));
    let ifeval = prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 2), 2..8)
        .prop_map(|rows| RolloutGroup::from_rows("p", "ifeval", key(&["ifeval", "rubrics"]), &rows));
    prop_oneof![writing, math, ifeval]
}

pub fn policy() -> rdpo::shaping::GatingPolicy<f64> {
    GatingConfig::paper_default().resolve(&reg()).unwrap()
}

pub fn gated_and_guards(g: &RolloutGroup<f64>) -> (Vec<usize>, Vec<usize>) {
    let p = policy();
    let task = &p.tasks[&g.task_id];
    let gated = task.pairs.iter().filter_map(|x| g.subspace.position(x.gated)).collect();
    let guards = task.pairs.iter().filter_map(|x| g.subspace.position(x.guard)).collect();
    (gated, guards)
}

pub fn gating_monotone() -> Result<(), String> {
    check(256, gated_groups(), |g| {
        let out = apply_gating(&g, &policy()).unwrap();
        for (a, b) in g.rollouts.iter().zip(&out.rollouts) {
            for k in 0..a.scores.len() {
                prop_assert!(b.scores[k] <= a.scores[k]);
            }
        }
        let (gated, _) = gated_and_guards(&g);
        for (a, b) in g.rollouts.iter().zip(&out.rollouts) {
            for k in (0..a.scores.len()).filter(|k| !gated.contains(k)) {
                prop_assert_eq!(a.scores[k], b.scores[k]);
            }
        }
        Ok(())
    })
}

pub fn gating_guard_unchanged() -> Result<(), String> {
    check(256, gated_groups(), |g| {
        let out = apply_gating(&g, &policy()).unwrap();
        let (_, guards) = gated_and_guards(&g);
        for (a, b) in g.rollouts.iter().zip(&out.rollouts) {
            for &k in &guards {
                prop_assert_eq!(a.scores[k].to_bits(), b.scores[k].to_bits());
            }
        }
        Ok(())
    })
}

pub fn length_reward_shape() -> Result<(), String> {
    check(256, (1.0..1e5f64, 0.1..4.0f64, 0.0..5.0f64, 0.0..5.0f64), |(l_ref, gamma, x, y)| {
        let p = LengthRewardParams::new(gamma).unwrap();
        prop_assert_eq!(length_reward(l_ref, l_ref, &p).unwrap(), 1.0);
        let just_above = length_reward(l_ref * (1.0 + 1e-9), l_ref, &p).unwrap();
        prop_assert!((just_above - 1.0).abs() < 1e-12);
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        let a = length_reward(lo * l_ref, l_ref, &p).unwrap();
        let b = length_reward(hi * l_ref, l_ref, &p).unwrap();
        prop_assert!(a >= b);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        Ok(())
    })
}

pub fn gating_idempotent() -> Result<(), String> {
    check(256, gated_groups(), |g| {
        let p = policy();
        let once = apply_gating(&g, &p).unwrap();
        let twice = apply_gating(&once, &p).unwrap();
        prop_assert_eq!(once, twice);
        Ok(())
    })
}

// ---- synthetic_bench ----

pub fn generator_determinism() -> Result<(), String> {
    check(32, (any::<u64>(), 1u64..1000), |(seed, step)| {
        let specs = default_paper_mixture();
        let a = Mixture::resolve(&specs, &reg()).unwrap().make_batch(step, seed);
        let b = Mixture::resolve(&specs, &reg()).unwrap().make_batch(step, seed);
        prop_assert_eq!(&a, &b);
        let c = Mixture::resolve(&specs, &reg()).unwrap().make_batch(step + 1, seed);
        prop_assert!(a.groups[0].rollouts != c.groups[0].rollouts);
        Ok(())
    })
}

/// Sup distance between the empirical CDF of `xs` and `cdf`, checked on both
/// sides of every jump.
pub fn ks_distance(xs: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let f = cdf(x);
        let below = if x.is_finite() { cdf(x - x.abs().max(1.0) * 1e-12) } else { f };
        d = d.max((j as f64 / n - f).abs()).max((i as f64 / n - below).abs());
        i = j;
    }
    d
}

pub fn marginal_fidelity() -> Result<(), String> {
    let families: Vec<Family> = default_paper_mixture()
        .into_iter()
        .flat_map(|t| t.dims.into_iter().map(|d| d.family))
        .chain([
            Family::Binary { p: 0.5 },
            Family::Continuous(ContinuousParams { location: 2.0, scale: 0.5, skew: 0.8, clip: None }),
        ])
        .collect();
    check(3, any::<u64>(), move |seed| {
        for fam in &families {
            let task = TaskSpec {
                task_id: "one".into(),
                dims: vec![DimensionSpec { dim: "rm".into(), family: fam.clone() }],
                target_corr: vec![vec![1.0]],
                prompts_per_step: 1250,
                group_size: 8,
            };
            let mut xs = samples(&task, 1, seed).column(0);
            let d = ks_distance(&mut xs, |x| fam.cdf(x));
            prop_assert!(d < 0.03, "{fam:?}: KS {d}");
        }
        Ok(())
    })
}

pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let m = Matrix::from_rows(&ranks(a).iter().zip(ranks(b)).map(|(x, y)| [*x, y]).collect::<Vec<_>>());
    pearson_matrix(&subspace_for(2), &m).unwrap().rho[(0, 1)]
}

pub fn copula_monotonicity() -> Result<(), String> {
    let pairs: Vec<(Family, Family)> = vec![
        (
            Family::Continuous(ContinuousParams { location: 0.0, scale: 1.0, skew: 0.5, clip: None }),
            Family::Continuous(ContinuousParams { location: 0.5, scale: 0.1, skew: -0.4, clip: Some([0.0, 1.0]) }),
        ),
        (
            Family::Binary { p: 0.4 },
            Family::Continuous(ContinuousParams { location: 0.8, scale: 0.08, skew: -0.3, clip: Some([0.0, 1.0]) }),
        ),
        (
            Family::Fractional { levels: vec![0.0, 0.5, 1.0], weights: vec![0.3, 0.4, 0.3] },
            Family::ContinuousWithOutliers {
                base: ContinuousParams { location: 0.5, scale: 0.1, skew: 0.0, clip: None },
                outlier_prob: 0.05,
                outlier_scale: 4.0,
            },
        ),
    ];
    check(3, any::<u64>(), move |seed| {
        for (fa, fb) in &pairs {
            let mut prev = f64::NEG_INFINITY;
            for rho in [0.0, 0.4, 0.8] {
                let task = TaskSpec {
                    task_id: "pair".into(),
                    dims: vec![
                        DimensionSpec { dim: "rubrics".into(), family: fa.clone() },
                        DimensionSpec { dim: "rm".into(), family: fb.clone() },
                    ],
                    target_corr: vec![vec![1.0, rho], vec![rho, 1.0]],
                    prompts_per_step: 1250,
                    group_size: 8,
                };
                let x = samples(&task, 1, seed);
                let s = spearman(&x.column(0), &x.column(1));
                prop_assert!(s > prev + 0.05, "rho {rho}: spearman {s} after {prev}");
                prev = s;
            }
        }
        Ok(())
    })
}

// ---- pipeline_cli ----

pub fn shared_batch() -> Result<(), String> {
    check(6, (any::<u64>(), prop::sample::subsequence(Method::ALL.to_vec(), 1..=4)), |(seed, subset)| {
        let full = small_config(Method::ALL.to_vec(), 7, 3, seed).validate().unwrap();
        let part = small_config(subset.clone(), 7, 3, seed).validate().unwrap();
        for step in 1..=7 {
            prop_assert_eq!(full.batch(step).unwrap(), part.batch(step).unwrap());
        }
        let a = run_in_memory(&full).unwrap();
        let b = run_in_memory(&part).unwrap();
        for m in subset {
            prop_assert_eq!(a.csv(m), b.csv(m));
        }
        Ok(())
    })
}

pub fn final_advantages_unit_moments() -> Result<(), String> {
    check(8, (any::<u64>(), 1usize..6), |(seed, prompts)| {
        let cfg = small_config(Method::ALL.to_vec(), 1, prompts, seed).validate().unwrap();
        let settings = cfg.method_settings();
        let mut states: Vec<MethodState> = Method::ALL.iter().map(|&m| MethodState::new(m)).collect();
        for step in 1..=8 {
            let batch = cfg.batch(step).unwrap();
            for st in &mut states {
                let out = method_pipeline(st.method, &batch, st, &settings).unwrap();
                if st.method == Method::Grpo {
                    continue;
                }
                let flat: Vec<f64> = out.scalars.concat();
                let sd = stats::pop_std(&flat);
                if sd == 0.0 {
                    continue;
                }
                prop_assert!(stats::mean(&flat).abs() < 1e-10, "{}: mean {}", st.method, stats::mean(&flat));
                prop_assert!((sd - 1.0).abs() < 1e-10, "{}: std {sd}", st.method);
            }
        }
        Ok(())
    })
}

pub fn csv_shape() -> Result<(), String> {
    let strat = (any::<u64>(), 1u64..6, 1usize..=4, prop::sample::subsequence(Method::ALL.to_vec(), 1..=5));
    check(8, strat, |(seed, steps, tasks, methods)| {
        let mut cfg = small_config(methods.clone(), steps, 2, seed);
        cfg.mixture.truncate(tasks);
        let out = run_in_memory(&cfg.validate().unwrap()).unwrap();
        prop_assert_eq!(out.reports.len(), methods.len());
        for m in &methods {
            let csv = out.csv(*m).unwrap();
            let lines: Vec<&str> = csv.lines().collect();
            prop_assert_eq!(lines[0], CSV_HEADER);
            prop_assert_eq!(lines.len() as u64, 1 + steps * (tasks as u64 + 1));
            for l in &lines[1..] {
                let fields: Vec<&str> = l.split(',').collect();
                prop_assert_eq!(fields.len(), 10);
                prop_assert_eq!(fields[2], m.name());
            }
            prop_assert!(csv.ends_with('\n') && !csv.contains('\r'));
        }
        Ok(())
    })
}
