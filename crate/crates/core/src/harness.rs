//! Experiment orchestration: optimum estimation, multi-seed algorithm
//! comparison at a fixed oracle budget, and CSV/manifest export.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{run, step_project, Algorithm, DynamicsConfig, RunTrace, StochasticOracle};
use crate::error::{Error, Result};
use crate::instance::{generate_synthetic, GeneratorParams, MarketInstance, PriceVector};
use crate::io;
use crate::oracles::{
    descent_constant, exact_agent_oracle, full_gradient, potential, sampled_oracle,
};
use crate::supplier::smooth;
use crate::vecmath::{dist2, norm2};

pub const DEFAULT_OPTIMUM_TOL: f64 = 1e-10;
pub const DEFAULT_OPTIMUM_ITER_CAP: u64 = 10_000_000;
/// Coordinates with optimal prices above this threshold count as active for
/// the clearing residual.
pub const ACTIVE_PRICE_THRESHOLD: f64 = 1e-8;
/// Target accuracy of the smoothing rewrite used only to obtain an objective
/// lower bound on instances without a finite smoothness constant.
const SURROGATE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The step norm fell below the tolerance.
    StepNorm,
    /// The iteration cap was hit first; the estimate is partial.
    IterationCap,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::StepNorm => "step-norm",
            StopReason::IterationCap => "iteration-cap",
        }
    }
}

/// High-accuracy optimum estimate: the reference point every suboptimality
/// column is measured against.
#[derive(Debug, Clone)]
pub struct OptimumEstimate {
    pub p_star: PriceVector,
    pub f_star: f64,
    /// Largest absolute supply-demand gap over coordinates with positive
    /// optimal price. Reported, never assumed small.
    pub clearing_residual: f64,
    pub stop: StopReason,
    pub iterations: u64,
}

impl OptimumEstimate {
    pub fn to_json(&self) -> String {
        let value = serde_json::json!({
            "f_star": self.f_star,
            "clearing_residual": self.clearing_residual,
            "stop": self.stop.as_str(),
            "iterations": self.iterations,
            "p_star": self.p_star.as_slice(),
        });
        serde_json::to_string_pretty(&value).expect("optimum serialization cannot fail")
    }
}

/// Projected gradient descent until the step norm drops below `tol`.
///
/// The step size comes from the exact supplier curvature plus the consumer
/// smoothness bound, which is far tighter than the aggregate worst-case
/// constant when adjustment weights are tiny; the step-norm stop then
/// certifies a gradient norm small enough for the clearing checks.
pub fn estimate_optimum(
    instance: &MarketInstance,
    tol: f64,
    max_iters: u64,
) -> Result<OptimumEstimate> {
    let violations = instance.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    if !instance.is_smooth() {
        return Err(Error::NonSmooth(
            "optimum estimation runs plain gradient descent; smooth the instance first".into(),
        ));
    }
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let step = 1.0 / descent_constant(instance)?;
    let mut p = instance.p0.as_slice().to_vec();
    let mut stop = StopReason::IterationCap;
    let mut iterations = 0;
    for t in 0..max_iters {
        let sample = full_gradient(instance, &p)?;
        let next = step_project(&p, &sample.g, step);
        let moved = dist2(&next, &p);
        p = next;
        iterations = t + 1;
        if moved <= tol {
            stop = StopReason::StepNorm;
            break;
        }
    }

    let gradient = full_gradient(instance, &p)?.g;
    let clearing_residual = p
        .iter()
        .zip(&gradient)
        .filter(|(&pi, _)| pi > ACTIVE_PRICE_THRESHOLD)
        .map(|(_, &gi)| gi.abs())
        .fold(0.0, f64::max);
    let f_star = potential(instance, &p)?;

    Ok(OptimumEstimate {
        p_star: PriceVector::new(p).expect("projected iterates stay nonnegative"),
        f_star,
        clearing_residual,
        stop,
        iterations,
    })
}

/// Default smoothing radius: twice the largest typical-supply norm, with a
/// floor of 1 so all-zero rosters still get a usable value.
pub fn estimate_radius(instance: &MarketInstance) -> f64 {
    instance
        .suppliers
        .iter()
        .map(|s| 2.0 * norm2(&s.y_hat))
        .fold(1.0, f64::max)
}

/// Default iterate-distance bound for mirror descent.
pub fn estimate_iterate_radius(instance: &MarketInstance) -> f64 {
    (2.0 * norm2(instance.p0.as_slice())).max(1.0)
}

/// Default gradient-norm bound for mirror descent: consumer samples have
/// norm exactly 1, supplier samples scale with the price magnitude.
pub fn estimate_gradient_bound(instance: &MarketInstance) -> f64 {
    let price_scale = norm2(instance.p0.as_slice()) + estimate_iterate_radius(instance);
    instance
        .suppliers
        .iter()
        .map(|s| (price_scale + 2.0 * s.gamma * norm2(&s.y_hat)) / (2.0 * (s.cost_coeff + s.gamma)))
        .fold(1.0, f64::max)
}

/// Where the experiment's instance comes from.
#[derive(Debug, Clone)]
pub enum InstanceSource {
    File(PathBuf),
    Generate { seed: u64, params: GeneratorParams },
    Inline(MarketInstance),
}

impl InstanceSource {
    fn resolve(&self) -> Result<MarketInstance> {
        match self {
            InstanceSource::File(path) => io::load(path),
            InstanceSource::Generate { seed, params } => generate_synthetic(*seed, params),
            InstanceSource::Inline(instance) => Ok(instance.clone()),
        }
    }

    fn describe(&self) -> String {
        match self {
            InstanceSource::File(path) => path.display().to_string(),
            InstanceSource::Generate { seed, .. } => format!("generated(seed={seed})"),
            InstanceSource::Inline(_) => "inline".into(),
        }
    }
}

/// Full comparison experiment: run every (algorithm, seed) cell to the
/// oracle budget and summarize suboptimality at geometric checkpoints.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub source: InstanceSource,
    /// One config per algorithm; `iterations`, `seed`, `f_star`, and
    /// `stride` are filled in per cell.
    pub algorithms: Vec<DynamicsConfig>,
    pub seeds: Vec<u64>,
    /// Total agent observations each run may consume.
    pub budget: u64,
    pub f_star_tol: f64,
    pub out_dir: PathBuf,
    pub stride: Option<u64>,
}

impl ExperimentSpec {
    pub fn new(source: InstanceSource, out_dir: PathBuf, budget: u64) -> Self {
        Self {
            source,
            algorithms: Vec::new(),
            seeds: (0..10).collect(),
            budget,
            f_star_tol: DEFAULT_OPTIMUM_TOL,
            out_dir,
            stride: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algo: String,
    pub checkpoint_calls: u64,
    pub median_subopt: f64,
    pub q25: f64,
    pub q75: f64,
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub algo: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug)]
pub struct ComparisonOutcome {
    pub f_star: f64,
    pub optimum: OptimumEstimate,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
    pub traces: Vec<RunTrace>,
    pub summary_path: PathBuf,
    pub manifest_path: PathBuf,
}

#[derive(Serialize)]
struct ManifestRun {
    algo: String,
    seed: u64,
    status: String,
    file: Option<String>,
    oracle_calls: Option<u64>,
    final_f: Option<f64>,
    max_sample_norm: Option<f64>,
    max_distance: Option<f64>,
    wall_time_s: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct ManifestAlgo {
    name: String,
    iterations: u64,
    step_control: f64,
    eta: f64,
    eps_div: f64,
    radius: Option<f64>,
    grad_bound: Option<f64>,
    oracle: String,
    adagrad_diagonal: bool,
}

#[derive(Serialize)]
struct Manifest {
    instance_source: String,
    suppliers: usize,
    consumers: usize,
    alternatives: usize,
    groups: usize,
    budget: u64,
    checkpoints: Vec<u64>,
    seeds: Vec<u64>,
    f_star: f64,
    f_star_method: String,
    f_star_stop: String,
    f_star_iterations: u64,
    clearing_residual: f64,
    algorithms: Vec<ManifestAlgo>,
    runs: Vec<ManifestRun>,
    files: Vec<String>,
    lower_bound_violations: Vec<String>,
}

/// Runs the comparison. Per-cell failures do not abort the experiment: the
/// surviving traces and the summary are written, failures land in the
/// manifest, and the caller decides what a nonempty failure list means.
pub fn compare(spec: &ExperimentSpec) -> Result<ComparisonOutcome> {
    if spec.algorithms.is_empty() {
        return Err(Error::InvalidParameter(
            "experiment needs at least one algorithm".into(),
        ));
    }
    if spec.seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "experiment needs at least one seed".into(),
        ));
    }
    let mut names: Vec<&str> = spec.algorithms.iter().map(|c| c.algorithm.name()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != spec.algorithms.len() {
        return Err(Error::InvalidParameter(
            "each algorithm may appear only once (trace files are named by algorithm)".into(),
        ));
    }

    let instance = spec.source.resolve()?;
    let violations = instance.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let agents = instance.num_agents() as u64;
    if spec.budget < agents {
        return Err(Error::InvalidParameter(format!(
            "budget {} cannot fit one full-gradient step (S + D = {agents})",
            spec.budget
        )));
    }

    // Reference optimum. Without a finite smoothness constant the reference
    // comes from a smoothed rewrite, whose minimum lower-bounds the true one,
    // so reported suboptimality stays a valid upper bound.
    let (optimum, f_star_method) = if instance.is_smooth() {
        let est = estimate_optimum(&instance, spec.f_star_tol, DEFAULT_OPTIMUM_ITER_CAP)?;
        (est, "gradient-descent".to_string())
    } else {
        let radius = estimate_radius(&instance);
        let smoothed = smooth(&instance, SURROGATE_EPS, radius, None)?;
        let est = estimate_optimum(
            &smoothed.instance,
            spec.f_star_tol,
            DEFAULT_OPTIMUM_ITER_CAP,
        )?;
        (
            est,
            format!("smoothed-surrogate(eps={SURROGATE_EPS},radius={radius})"),
        )
    };
    let f_star = optimum.f_star;

    fs::create_dir_all(&spec.out_dir)?;

    // Build the cell grid; every cell owns its rng via the seed.
    let mut cells: Vec<DynamicsConfig> = Vec::new();
    for template in &spec.algorithms {
        for &seed in &spec.seeds {
            let mut cfg = template.clone();
            cfg.seed = seed;
            cfg.f_star = Some(f_star);
            cfg.stride = spec.stride;
            cfg.iterations = if cfg.algorithm.is_full_gradient() {
                spec.budget / agents
            } else {
                spec.budget
            };
            if cfg.algorithm == Algorithm::Smd {
                cfg.radius = cfg.radius.or(Some(estimate_iterate_radius(&instance)));
                cfg.grad_bound = cfg.grad_bound.or(Some(estimate_gradient_bound(&instance)));
            }
            cells.push(cfg);
        }
    }

    let results: Vec<(DynamicsConfig, Result<RunTrace>)> = cells
        .into_par_iter()
        .map(|cfg| {
            let result = run(&instance, &cfg);
            (cfg, result)
        })
        .collect();

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    let mut manifest_runs = Vec::new();
    let mut files = Vec::new();
    for (cfg, result) in &results {
        let algo = cfg.algorithm.name().to_string();
        match result {
            Ok(trace) => {
                let file = format!("{}_{}.csv", algo, cfg.seed);
                write_trace_csv(trace, &spec.out_dir.join(&file))?;
                manifest_runs.push(ManifestRun {
                    algo: algo.clone(),
                    seed: cfg.seed,
                    status: "ok".into(),
                    file: Some(file.clone()),
                    oracle_calls: Some(trace.oracle_calls),
                    final_f: trace.records.last().map(|r| r.f),
                    max_sample_norm: Some(trace.max_sample_norm),
                    max_distance: Some(trace.max_distance),
                    wall_time_s: Some(trace.wall_time_s),
                    error: None,
                });
                files.push(file);
                traces.push(trace.clone());
            }
            Err(e) => {
                manifest_runs.push(ManifestRun {
                    algo: algo.clone(),
                    seed: cfg.seed,
                    status: "failed".into(),
                    file: None,
                    oracle_calls: None,
                    final_f: None,
                    max_sample_norm: None,
                    max_distance: None,
                    wall_time_s: None,
                    error: Some(e.to_string()),
                });
                failures.push(CellFailure {
                    algo,
                    seed: cfg.seed,
                    error: e.to_string(),
                });
            }
        }
    }

    // A recorded objective below the reference would mean the reference is
    // not a lower bound; that invalidates every suboptimality number.
    let mut lower_bound_violations = Vec::new();
    for trace in &traces {
        let mut min_f = trace.f_initial;
        for rec in &trace.records {
            min_f = min_f.min(rec.f);
        }
        if min_f < f_star - 1e-8 {
            lower_bound_violations.push(format!(
                "{}_{}: recorded f = {min_f} below reference {f_star}",
                trace.algorithm, trace.seed
            ));
        }
    }

    let checkpoints = checkpoint_grid(spec.budget);
    let mut summary = Vec::new();
    for template in &spec.algorithms {
        let algo = template.algorithm.name();
        let algo_traces: Vec<&RunTrace> = traces
            .iter()
            .filter(|t| t.algorithm == template.algorithm)
            .collect();
        if algo_traces.is_empty() {
            continue;
        }
        for &cp in &checkpoints {
            let mut subopts: Vec<f64> = algo_traces
                .iter()
                .map(|t| subopt_at_calls(t, cp, f_star))
                .collect();
            subopts.sort_by(|a, b| a.total_cmp(b));
            summary.push(SummaryRow {
                algo: algo.to_string(),
                checkpoint_calls: cp,
                median_subopt: quantile(&subopts, 0.5),
                q25: quantile(&subopts, 0.25),
                q75: quantile(&subopts, 0.75),
            });
        }
    }

    let summary_path = spec.out_dir.join("summary.csv");
    write_summary_csv(&summary, &summary_path)?;
    files.push("summary.csv".into());

    let manifest = Manifest {
        instance_source: spec.source.describe(),
        suppliers: instance.num_suppliers(),
        consumers: instance.num_consumers(),
        alternatives: instance.n(),
        groups: instance.num_groups(),
        budget: spec.budget,
        checkpoints: checkpoints.clone(),
        seeds: spec.seeds.clone(),
        f_star,
        f_star_method,
        f_star_stop: optimum.stop.as_str().into(),
        f_star_iterations: optimum.iterations,
        clearing_residual: optimum.clearing_residual,
        algorithms: spec
            .algorithms
            .iter()
            .map(|c| ManifestAlgo {
                name: c.algorithm.name().into(),
                iterations: if c.algorithm.is_full_gradient() {
                    spec.budget / agents
                } else {
                    spec.budget
                },
                step_control: c.step_control,
                eta: c.eta,
                eps_div: c.eps_div,
                radius: c.radius,
                grad_bound: c.grad_bound,
                oracle: match c.oracle {
                    StochasticOracle::ExactAgent => "exact-agent".into(),
                    StochasticOracle::SampledSale => "sampled-sale".into(),
                },
                adagrad_diagonal: c.adagrad_diagonal,
            })
            .collect(),
        runs: manifest_runs,
        files: {
            let mut all = files.clone();
            all.push("manifest.json".into());
            all
        },
        lower_bound_violations: lower_bound_violations.clone(),
    };
    let manifest_path = spec.out_dir.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail"),
    )?;

    if !lower_bound_violations.is_empty() {
        return Err(Error::Experiment(format!(
            "objective reference is not a lower bound: {}",
            lower_bound_violations.join("; ")
        )));
    }

    Ok(ComparisonOutcome {
        f_star,
        optimum,
        summary,
        failures,
        traces,
        summary_path,
        manifest_path,
    })
}

/// Geometric checkpoint grid `{B/100, B/10, B}`, deduplicated for tiny
/// budgets.
pub fn checkpoint_grid(budget: u64) -> Vec<u64> {
    let mut grid = vec![(budget / 100).max(1), (budget / 10).max(1), budget];
    grid.dedup();
    grid
}

/// Suboptimality at an oracle-call budget: the last record within the
/// budget, or the starting point when nothing was recorded yet.
pub fn subopt_at_calls(trace: &RunTrace, calls: u64, f_star: f64) -> f64 {
    trace
        .records
        .iter()
        .rev()
        .find(|r| r.oracle_calls <= calls)
        .map_or(trace.f_initial - f_star, |r| r.f - f_star)
}

/// Linear-interpolation quantile of an ascending-sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let k = (sorted.len() - 1) as f64 * q;
    let lo = k.floor() as usize;
    let hi = k.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (k - lo as f64)
}

pub fn write_trace_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    let mut out = String::from("iter,oracle_calls,f,subopt,elapsed_s\n");
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            r.iter, r.oracle_calls, r.f, r.subopt, r.elapsed_s
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = String::from("algo,checkpoint_calls,median_subopt,q25,q75\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.algo, r.checkpoint_calls, r.median_subopt, r.q25, r.q75
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SelfTestReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Fast oracle self-checks used by the CLI `validate` subcommand: gradient
/// versus central finite differences, choice-probability normalization, and
/// a sampled-oracle unbiasedness smoke test.
pub fn self_test(instance: &MarketInstance, seed: u64) -> Result<Vec<SelfTestReport>> {
    use rand::SeedableRng;
    let violations = instance.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let mut reports = Vec::new();

    // Evaluate away from the orthant boundary so central differences stay in
    // the smooth region.
    let p: Vec<f64> = instance.p0.as_slice().iter().map(|v| v + 0.05).collect();
    let h = 1e-5;
    let g = full_gradient(instance, &p)?.g;
    let mut fd = vec![0.0; p.len()];
    for i in 0..p.len() {
        let mut hi = p.clone();
        hi[i] += h;
        let mut lo = p.clone();
        lo[i] -= h;
        fd[i] = (potential(instance, &hi)? - potential(instance, &lo)?) / (2.0 * h);
    }
    let err = dist2(&g, &fd);
    let tol = (1e-6 * norm2(&fd)).max(1e-8);
    reports.push(SelfTestReport {
        name: "gradient-finite-difference",
        passed: err <= tol,
        detail: format!("|grad - fd| = {err:.3e}, tolerance {tol:.3e}"),
    });

    let mut worst = 0.0_f64;
    for d in 0..instance.num_consumers() {
        let x = crate::consumer::choice_probabilities(instance, d, &p)?;
        let sum: f64 = x.values().iter().sum();
        worst = worst.max((sum - 1.0).abs());
    }
    reports.push(SelfTestReport {
        name: "choice-normalization",
        passed: worst <= 1e-12,
        detail: format!("max |sum(x) - 1| = {worst:.3e}"),
    });

    if instance.num_consumers() > 0 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let agent = instance.num_suppliers();
        let exact = exact_agent_oracle(instance, agent, &p)?.g;
        let draws = 2000;
        let mut mean = vec![0.0; p.len()];
        for _ in 0..draws {
            let s = sampled_oracle(instance, agent, &p, &mut rng)?;
            for (m, gi) in mean.iter_mut().zip(&s.g) {
                *m += gi;
            }
        }
        for m in &mut mean {
            *m /= draws as f64;
        }
        let mut ok = true;
        let mut worst_z = 0.0_f64;
        for (m, e) in mean.iter().zip(&exact) {
            let x = -e;
            let se = (x * (1.0 - x) / draws as f64).sqrt().max(1e-12);
            let z = (m - e).abs() / se;
            worst_z = worst_z.max(z);
            if z > 5.0 {
                ok = false;
            }
        }
        reports.push(SelfTestReport {
            name: "sampled-oracle-unbiasedness",
            passed: ok,
            detail: format!("worst |z| over coordinates = {worst_z:.2} (limit 5)"),
        });
    }

    Ok(reports)
}
