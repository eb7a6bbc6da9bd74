//! Dynamics checks that need independent references: a grid-search optimum
//! for the mirror-descent suboptimality envelope, a bisection root for the
//! online clearing point, and oracle-budget accounting.

use pricer_core::harness::{compare, subopt_at_calls, ExperimentSpec, InstanceSource};
use pricer_core::oracles::{PointMassConsumers, PointMassSuppliers};
use pricer_core::{
    potential, run, run_online, Algorithm, DynamicsConfig, GeneratorParams, MarketInstance,
    OnlineObjective, PopulationModel, PriceVector, StochasticOracle, SupplierSpec, UtilityMatrix,
};
use proptest::prelude::*;

/// Two-alternative market with one zero-adjustment supplier; the quadratic
/// cost keeps everything well defined, but the worst-case smoothness
/// constant is infinite, which is exactly the mirror-descent regime.
fn zero_gamma_instance() -> MarketInstance {
    MarketInstance::new(
        vec![vec![0, 1]],
        vec![0.9],
        UtilityMatrix::new(2, 1, vec![3.0, 2.0]).unwrap(),
        vec![SupplierSpec {
            gamma: 0.0,
            y_hat: vec![0.0, 0.0],
            cost_coeff: 1.0,
        }],
        PriceVector::new(vec![0.5, 0.5]).unwrap(),
    )
    .unwrap()
}

/// Coarse-to-fine grid minimization of the potential over a price box.
fn grid_minimum(instance: &MarketInstance, hi: f64) -> (Vec<f64>, f64) {
    let eval = |p: &[f64]| potential(instance, p).unwrap();
    let mut best = (vec![0.0, 0.0], f64::INFINITY);
    let coarse = 0.01;
    let steps = (hi / coarse) as usize;
    for i in 0..=steps {
        for j in 0..=steps {
            let p = [i as f64 * coarse, j as f64 * coarse];
            let f = eval(&p);
            if f < best.1 {
                best = (p.to_vec(), f);
            }
        }
    }
    let fine = 1e-4;
    let center = best.0.clone();
    for i in -100..=100_i64 {
        for j in -100..=100_i64 {
            let p = [
                (center[0] + i as f64 * fine).max(0.0),
                (center[1] + j as f64 * fine).max(0.0),
            ];
            let f = eval(&p);
            if f < best.1 {
                best = (p.to_vec(), f);
            }
        }
    }
    best
}

#[test]
fn smd_median_suboptimality_stays_under_the_envelope() {
    let inst = zero_gamma_instance();
    let (p_grid, f_grid) = grid_minimum(&inst, 4.0);
    assert!(
        p_grid.iter().all(|&v| v > 0.05 && v < 3.95),
        "grid minimum must be interior, got {p_grid:?}"
    );

    let (c, radius, bound, n) = (1.0_f64, 10.0, 6.0, 10_000u64);
    let envelope = c.max(1.0 / c) * radius * bound / (n as f64).sqrt();

    let mut subopts = Vec::new();
    for seed in 0..10 {
        let cfg = DynamicsConfig {
            algorithm: Algorithm::Smd,
            iterations: n,
            step_control: c,
            radius: Some(radius),
            grad_bound: Some(bound),
            seed,
            ..Default::default()
        };
        let trace = run(&inst, &cfg).unwrap();
        // The envelope's premises must actually hold along the run.
        assert!(
            trace.max_distance <= radius,
            "iterates wandered {} > R = {radius}",
            trace.max_distance
        );
        assert!(
            trace.max_sample_norm <= bound,
            "sample norm {} > M = {bound}",
            trace.max_sample_norm
        );
        let f_out = potential(&inst, trace.output.as_slice()).unwrap();
        subopts.push(f_out - f_grid);
    }
    subopts.sort_by(|a, b| a.total_cmp(b));
    let median = 0.5 * (subopts[4] + subopts[5]);
    assert!(
        median <= envelope,
        "median suboptimality {median} exceeds envelope {envelope}"
    );
    assert!(median >= -1e-6, "grid reference beaten by {median}");
}

#[test]
fn online_dynamic_finds_the_scalar_clearing_price() {
    // One alternative, point-mass population, beta = 1/2: the expected
    // update vanishes where y(p) = x(p) = 1.
    let spec = SupplierSpec::quadratic(1.0, vec![1.0]);
    let util = vec![2.0];
    let model = PopulationModel::new(
        0.5,
        vec![vec![0]],
        vec![1.0],
        Box::new(PointMassSuppliers(spec.clone())),
        Box::new(PointMassConsumers(util.clone())),
    )
    .unwrap();

    // Bisection on beta * y(p) - (1 - beta) * x(p); x is identically 1 with
    // a single alternative.
    let clearing = |p: f64| 0.5 * (p + 2.0) / 4.0 - 0.5;
    let (mut lo, mut hi) = (0.0, 10.0);
    assert!(clearing(lo) < 0.0 && clearing(hi) > 0.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if clearing(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    assert!((root - 2.0).abs() < 1e-10);

    let eval_instance = MarketInstance::new(
        vec![vec![0]],
        vec![1.0],
        UtilityMatrix::new(1, 1, util).unwrap(),
        vec![spec],
        PriceVector::new(vec![0.5]).unwrap(),
    )
    .unwrap();

    let mut finals = Vec::new();
    for seed in 0..5 {
        let cfg = DynamicsConfig {
            algorithm: Algorithm::SgdOnline,
            iterations: 100_000,
            step_control: 1.0,
            seed,
            ..Default::default()
        };
        let trace = run_online(
            &model,
            &eval_instance.p0,
            OnlineObjective::Finite(&eval_instance),
            &cfg,
        )
        .unwrap();
        // One observation per step.
        for rec in &trace.records {
            assert_eq!(rec.oracle_calls, rec.iter);
        }
        finals.push(trace.output.as_slice()[0]);
    }
    finals.sort_by(|a, b| a.total_cmp(b));
    let median = finals[2];
    assert!(
        (median - root).abs() <= 0.2,
        "median clearing price {median} vs root {root}"
    );
}

#[test]
fn online_run_with_uniform_box_population() {
    // Fresh suppliers and consumers drawn per observation, objective
    // estimated by Monte Carlo; the run must stay finite and in the orthant.
    use pricer_core::oracles::{UniformBoxConsumers, UniformBoxSuppliers};
    let n = 4;
    let model = PopulationModel::new(
        0.4,
        vec![vec![0, 1], vec![2, 3]],
        vec![0.6, 0.9],
        Box::new(UniformBoxSuppliers {
            alternatives: n,
            gamma: 0.5,
            cost_coeff: 1.0,
            y_hat_range: (0.01, 2.0),
        }),
        Box::new(UniformBoxConsumers {
            alternatives: n,
            utility_range: (0.01, 5.0),
        }),
    )
    .unwrap();
    let p0 = PriceVector::new(vec![0.5; n]).unwrap();
    let cfg = DynamicsConfig {
        algorithm: Algorithm::SgdOnline,
        iterations: 2000,
        seed: 12,
        keep_iterates: true,
        ..Default::default()
    };
    let trace = run_online(
        &model,
        &p0,
        OnlineObjective::MonteCarlo {
            samples: 128,
            seed: 5,
        },
        &cfg,
    )
    .unwrap();
    assert!(trace.records.iter().all(|r| r.f.is_finite()));
    assert!(trace.records.iter().all(|r| r.subopt.is_nan()));
    assert!(trace
        .iterates
        .as_ref()
        .unwrap()
        .iter()
        .all(|p| p.iter().all(|&v| v >= 0.0)));
    // The estimated objective should have improved from the start.
    let last = trace.records.last().unwrap();
    assert!(last.f < trace.f_initial);
}

#[test]
fn online_monte_carlo_objective_is_deterministic_per_record() {
    let spec = SupplierSpec::quadratic(1.0, vec![1.0]);
    let model = PopulationModel::new(
        0.5,
        vec![vec![0]],
        vec![1.0],
        Box::new(PointMassSuppliers(spec)),
        Box::new(PointMassConsumers(vec![2.0])),
    )
    .unwrap();
    let p0 = PriceVector::new(vec![0.5]).unwrap();
    let cfg = DynamicsConfig {
        algorithm: Algorithm::SgdOnline,
        iterations: 200,
        seed: 3,
        ..Default::default()
    };
    let a = run_online(
        &model,
        &p0,
        OnlineObjective::MonteCarlo {
            samples: 64,
            seed: 9,
        },
        &cfg,
    )
    .unwrap();
    let b = run_online(
        &model,
        &p0,
        OnlineObjective::MonteCarlo {
            samples: 64,
            seed: 9,
        },
        &cfg,
    )
    .unwrap();
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert_eq!(ra.f.to_bits(), rb.f.to_bits());
    }
}

#[test]
fn budget_accounting_across_algorithm_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let inst =
        pricer_core::generate_synthetic(17, &GeneratorParams::new(5, 10, 20, 5, 1e-4)).unwrap();
    let agents = inst.num_agents() as u64;
    let budget = 777;
    let mut spec = ExperimentSpec::new(
        InstanceSource::Inline(inst),
        dir.path().to_path_buf(),
        budget,
    );
    spec.algorithms = vec![
        DynamicsConfig::for_algorithm(Algorithm::Sgd),
        DynamicsConfig::for_algorithm(Algorithm::Gd),
        DynamicsConfig::for_algorithm(Algorithm::Agd),
    ];
    spec.seeds = vec![0, 1];
    let outcome = compare(&spec).unwrap();
    assert!(outcome.failures.is_empty());
    assert_eq!(outcome.traces.len(), 6);
    for trace in &outcome.traces {
        assert!(trace.oracle_calls <= budget, "{}", trace.algorithm);
        assert!(
            trace.oracle_calls >= budget - agents,
            "{}: {} calls",
            trace.algorithm,
            trace.oracle_calls
        );
        for rec in &trace.records {
            assert!(rec.oracle_calls <= budget);
        }
    }
    // Suboptimality lookups see a usable record at every checkpoint.
    for trace in &outcome.traces {
        for cp in pricer_core::harness::checkpoint_grid(budget) {
            let s = subopt_at_calls(trace, cp, outcome.f_star);
            assert!(s.is_finite());
        }
    }
}

#[test]
fn stochastic_medians_beat_full_gradient_in_the_summary() {
    // Ten seeds on one instance through the experiment driver itself; the
    // last summary checkpoint is the full budget.
    let dir = tempfile::tempdir().unwrap();
    let inst =
        pricer_core::generate_synthetic(17, &GeneratorParams::new(5, 10, 20, 5, 1e-4)).unwrap();
    let budget = 100 * inst.num_agents() as u64;
    let mut spec = ExperimentSpec::new(
        InstanceSource::Inline(inst),
        dir.path().to_path_buf(),
        budget,
    );
    spec.algorithms = vec![
        DynamicsConfig::for_algorithm(Algorithm::Sgd),
        DynamicsConfig::for_algorithm(Algorithm::Adagrad),
        DynamicsConfig::for_algorithm(Algorithm::Gd),
        DynamicsConfig::for_algorithm(Algorithm::Agd),
    ];
    spec.seeds = (0..10).collect();
    let outcome = compare(&spec).unwrap();
    assert!(outcome.failures.is_empty());
    let median_at_budget = |algo: &str| -> f64 {
        outcome
            .summary
            .iter()
            .find(|r| r.algo == algo && r.checkpoint_calls == budget)
            .unwrap()
            .median_subopt
    };
    let (sgd, adagrad, gd, agd) = (
        median_at_budget("sgd"),
        median_at_budget("adagrad"),
        median_at_budget("gd"),
        median_at_budget("agd"),
    );
    assert!(sgd < gd && sgd < agd, "sgd {sgd} vs gd {gd}, agd {agd}");
    assert!(
        adagrad < gd && adagrad < agd,
        "adagrad {adagrad} vs gd {gd}, agd {agd}"
    );
}

#[test]
fn exact_oracle_runs_match_sampled_runs_in_shape_not_path() {
    // Same seed, different oracles: trajectories differ but both stay
    // finite and nonnegative, and call accounting is identical.
    let inst = pricer_core::generate_synthetic(2, &GeneratorParams::new(2, 3, 6, 2, 0.5)).unwrap();
    let base = DynamicsConfig {
        iterations: 400,
        seed: 5,
        ..Default::default()
    };
    let sampled = run(&inst, &base).unwrap();
    let exact = run(
        &inst,
        &DynamicsConfig {
            oracle: StochasticOracle::ExactAgent,
            ..base
        },
    )
    .unwrap();
    assert_eq!(sampled.oracle_calls, exact.oracle_calls);
    assert!(exact
        .output
        .as_slice()
        .iter()
        .zip(sampled.output.as_slice())
        .any(|(a, b)| a != b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projected_steps_never_leave_the_orthant(
        p in proptest::collection::vec(0.0f64..10.0, 1..8),
        g in proptest::collection::vec(-5.0f64..5.0, 1..8),
        step in 1e-6f64..10.0,
    ) {
        let n = p.len().min(g.len());
        let next = pricer_core::step_project(&p[..n], &g[..n], step);
        prop_assert!(next.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_gradient_is_a_fixed_point(
        p in proptest::collection::vec(0.0f64..10.0, 1..8),
        step in 1e-6f64..10.0,
    ) {
        let g = vec![0.0; p.len()];
        let next = pricer_core::step_project(&p, &g, step);
        prop_assert_eq!(next, p);
    }
}
