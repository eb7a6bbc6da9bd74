//! Command-line front end: generate instances, validate them, estimate the
//! optimum, run a single dynamic, or run a full multi-seed comparison.
//!
//! Exit codes: 0 success, 2 usage, 3 validation/parse, 4 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pricer_core::harness::{self, InstanceSource};
use pricer_core::{
    io, Algorithm, DynamicsConfig, Error as CoreError, ExperimentSpec, GeneratorParams,
    StochasticOracle,
};

#[derive(Parser)]
#[command(
    name = "pricer",
    about = "Market-clearing price dynamics simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GenerateParams {
    /// Generator seed.
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Number of suppliers.
    #[arg(long = "S", default_value_t = 5)]
    suppliers: usize,
    /// Number of consumers.
    #[arg(long = "D", default_value_t = 10)]
    consumers: usize,
    /// Number of product alternatives.
    #[arg(long = "n", default_value_t = 20)]
    alternatives: usize,
    /// Number of alternative groups.
    #[arg(long = "m", default_value_t = 5)]
    groups: usize,
    /// Quantity-adjustment weight for every supplier.
    #[arg(long, default_value_t = 1e-4)]
    gamma: f64,
}

impl GenerateParams {
    fn to_core(&self) -> GeneratorParams {
        GeneratorParams::new(
            self.suppliers,
            self.consumers,
            self.alternatives,
            self.groups,
            self.gamma,
        )
    }
}

#[derive(Args, Clone)]
struct HyperParams {
    /// Step-control parameter of the square-root-step dynamics.
    #[arg(long = "C", default_value_t = 1.0)]
    step_control: f64,
    /// Adaptive-step size parameter.
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Zero-division guard for the adaptive accumulator.
    #[arg(long = "eps-div", default_value_t = 1e-8)]
    eps_div: f64,
    /// Iterate-distance bound for mirror descent (estimated when absent).
    #[arg(long = "R")]
    radius: Option<f64>,
    /// Gradient-norm bound for mirror descent (estimated when absent).
    #[arg(long = "M")]
    grad_bound: Option<f64>,
    /// Consumer oracle: `sampled` sales or `exact` choice distributions.
    #[arg(long, default_value = "sampled")]
    oracle: String,
    /// Per-coordinate adaptive accumulator instead of the scalar one.
    #[arg(long)]
    diagonal: bool,
    /// Record every k-th iteration (default: every one up to 1000, then
    /// every 10th).
    #[arg(long)]
    stride: Option<u64>,
}

impl HyperParams {
    fn apply(&self, cfg: &mut DynamicsConfig) -> Result<(), CliError> {
        cfg.step_control = self.step_control;
        cfg.eta = self.eta;
        cfg.eps_div = self.eps_div;
        cfg.radius = self.radius;
        cfg.grad_bound = self.grad_bound;
        cfg.adagrad_diagonal = self.diagonal;
        cfg.stride = self.stride;
        cfg.oracle = match self.oracle.as_str() {
            "sampled" => StochasticOracle::SampledSale,
            "exact" => StochasticOracle::ExactAgent,
            other => {
                return Err(CliError::usage(format!(
                    "unknown oracle `{other}` (expected `sampled` or `exact`)"
                )))
            }
        };
        Ok(())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance and write it to a JSON file.
    Generate {
        #[command(flatten)]
        params: GenerateParams,
        /// Output path for the instance JSON.
        #[arg(long, default_value = "instance.json")]
        out: PathBuf,
    },
    /// Check instance invariants and run the oracle self-tests.
    Validate {
        #[arg(long)]
        instance: PathBuf,
        /// Seed for the sampling self-test.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimate the optimum with a high-accuracy deterministic run.
    Estimate {
        #[arg(long)]
        instance: PathBuf,
        /// Stop once the step norm falls below this tolerance.
        #[arg(long, default_value_t = harness::DEFAULT_OPTIMUM_TOL)]
        tol: f64,
        #[arg(long = "max-iters", default_value_t = harness::DEFAULT_OPTIMUM_ITER_CAP)]
        max_iters: u64,
        /// Optional output path for the optimum JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one algorithm and write its convergence trace.
    Run {
        #[arg(long)]
        instance: PathBuf,
        /// Algorithm: sgd, adagrad, sgd-online, smd, gd, agd.
        #[arg(long)]
        algo: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Oracle-call budget (full-gradient methods divide by S + D).
        #[arg(long, conflicts_with = "iters")]
        budget: Option<u64>,
        /// Iteration count (alternative to --budget).
        #[arg(long)]
        iters: Option<u64>,
        #[command(flatten)]
        hyper: HyperParams,
        /// Reference objective value for the suboptimality column.
        #[arg(long)]
        fstar: Option<f64>,
        /// Early stop on step norm (plain gradient descent only).
        #[arg(long = "gd-tol")]
        gd_tol: Option<f64>,
        /// Output path for the trace CSV.
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
    /// Run a multi-seed comparison and write traces, summary, and manifest.
    Compare {
        /// Instance file; omit to generate one in place.
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Generator seed used when no instance file is given.
        #[arg(long = "gen-seed", default_value_t = 17)]
        gen_seed: u64,
        #[command(flatten)]
        gen: GenerateParams,
        /// Comma-separated algorithm list.
        #[arg(long, default_value = "sgd,adagrad,gd,agd")]
        algos: String,
        /// Comma-separated run seeds.
        #[arg(long, default_value = "0,1,2,3,4,5,6,7,8,9")]
        seeds: String,
        /// Total oracle-call budget per run.
        #[arg(long)]
        budget: u64,
        /// Optimum-estimation tolerance.
        #[arg(long, default_value_t = harness::DEFAULT_OPTIMUM_TOL)]
        tol: f64,
        #[command(flatten)]
        hyper: HyperParams,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

struct CliError {
    code: u8,
    kind: &'static str,
    message: String,
}

impl CliError {
    fn usage(message: String) -> Self {
        Self {
            code: 2,
            kind: "usage",
            message,
        }
    }

    fn runtime(message: String) -> Self {
        Self {
            code: 4,
            kind: "runtime",
            message,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let (code, kind) = match &e {
            CoreError::InvalidParameter(_) => (2, "usage"),
            CoreError::Validation(_) => (3, "validation"),
            CoreError::Parse { .. } => (3, "parse"),
            CoreError::NonSmooth(_) => (4, "nonsmooth"),
            CoreError::Degenerate(_) => (4, "degenerate"),
            CoreError::IndexOutOfRange(_) => (2, "usage"),
            CoreError::Experiment(_) => (4, "experiment"),
            CoreError::Io(_) => (4, "io"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: kind={} msg={:?}", e.kind, e.message);
            ExitCode::from(e.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate { params, out } => {
            let instance = pricer_core::generate_synthetic(params.seed, &params.to_core())?;
            io::save(&instance, &out)?;
            println!(
                "wrote instance (S={}, D={}, n={}, m={}) to {}",
                instance.num_suppliers(),
                instance.num_consumers(),
                instance.n(),
                instance.num_groups(),
                out.display()
            );
            Ok(())
        }
        Command::Validate { instance, seed } => {
            let inst = io::load(&instance)?;
            let reports = pricer_core::self_test(&inst, seed)?;
            let mut all_ok = true;
            for r in &reports {
                println!(
                    "{}: {} ({})",
                    r.name,
                    if r.passed { "ok" } else { "FAILED" },
                    r.detail
                );
                all_ok &= r.passed;
            }
            if all_ok {
                println!("instance valid, all self-tests passed");
                Ok(())
            } else {
                Err(CliError {
                    code: 3,
                    kind: "validation",
                    message: "oracle self-tests failed".into(),
                })
            }
        }
        Command::Estimate {
            instance,
            tol,
            max_iters,
            out,
        } => {
            let inst = io::load(&instance)?;
            let est = pricer_core::estimate_optimum(&inst, tol, max_iters)?;
            println!(
                "f_star = {:.12e}  clearing_residual = {:.3e}  stop = {}  iterations = {}",
                est.f_star,
                est.clearing_residual,
                est.stop.as_str(),
                est.iterations
            );
            if let Some(path) = out {
                std::fs::write(&path, est.to_json()).map_err(CoreError::from)?;
                println!("wrote optimum to {}", path.display());
            }
            Ok(())
        }
        Command::Run {
            instance,
            algo,
            seed,
            budget,
            iters,
            hyper,
            fstar,
            gd_tol,
            out,
        } => {
            let inst = io::load(&instance)?;
            let algorithm: Algorithm = algo.parse()?;
            let mut cfg = DynamicsConfig::for_algorithm(algorithm);
            hyper.apply(&mut cfg)?;
            cfg.seed = seed;
            cfg.f_star = fstar;
            cfg.gd_tol = gd_tol;
            cfg.iterations = match (iters, budget) {
                (Some(n), _) => n,
                (None, Some(b)) => {
                    if algorithm.is_full_gradient() {
                        let agents = inst.num_agents() as u64;
                        if b < agents {
                            return Err(CliError::usage(format!(
                                "budget {b} cannot fit one full-gradient step (S + D = {agents})"
                            )));
                        }
                        b / agents
                    } else {
                        b
                    }
                }
                (None, None) => {
                    return Err(CliError::usage(
                        "one of --iters or --budget is required".into(),
                    ))
                }
            };
            if algorithm == Algorithm::Smd {
                cfg.radius = cfg.radius.or(Some(harness::estimate_iterate_radius(&inst)));
                cfg.grad_bound = cfg
                    .grad_bound
                    .or(Some(harness::estimate_gradient_bound(&inst)));
            }
            let trace = pricer_core::run(&inst, &cfg)?;
            harness::write_trace_csv(&trace, &out)?;
            let last = trace.records.last().expect("at least one record");
            println!(
                "{} finished: {} oracle calls, f = {:.9e}, subopt = {:.3e}, trace -> {}",
                algorithm,
                trace.oracle_calls,
                last.f,
                last.subopt,
                out.display()
            );
            Ok(())
        }
        Command::Compare {
            instance,
            gen_seed,
            gen,
            algos,
            seeds,
            budget,
            tol,
            hyper,
            out,
        } => {
            let source = match instance {
                Some(path) => InstanceSource::File(path),
                None => InstanceSource::Generate {
                    seed: gen_seed,
                    params: gen.to_core(),
                },
            };
            let mut spec = ExperimentSpec::new(source, out, budget);
            spec.f_star_tol = tol;
            spec.stride = hyper.stride;
            spec.seeds = parse_seeds(&seeds)?;
            for name in algos.split(',').filter(|s| !s.is_empty()) {
                let algorithm: Algorithm = name.trim().parse()?;
                let mut cfg = DynamicsConfig::for_algorithm(algorithm);
                hyper.apply(&mut cfg)?;
                spec.algorithms.push(cfg);
            }
            let outcome = pricer_core::compare(&spec)?;
            println!(
                "f_star = {:.12e} (clearing residual {:.3e})",
                outcome.f_star, outcome.optimum.clearing_residual
            );
            println!("algo,checkpoint_calls,median_subopt,q25,q75");
            for row in &outcome.summary {
                println!(
                    "{},{},{},{},{}",
                    row.algo, row.checkpoint_calls, row.median_subopt, row.q25, row.q75
                );
            }
            println!(
                "wrote {} traces, summary, and manifest to {}",
                outcome.traces.len(),
                spec.out_dir.display()
            );
            if outcome.failures.is_empty() {
                Ok(())
            } else {
                let detail: Vec<String> = outcome
                    .failures
                    .iter()
                    .map(|f| format!("{}_{}: {}", f.algo, f.seed, f.error))
                    .collect();
                Err(CliError::runtime(format!(
                    "{} run(s) failed: {}",
                    outcome.failures.len(),
                    detail.join("; ")
                )))
            }
        }
    }
}

fn parse_seeds(raw: &str) -> Result<Vec<u64>, CliError> {
    let seeds: Result<Vec<u64>, _> = raw
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse::<u64>())
        .collect();
    match seeds {
        Ok(v) if !v.is_empty() => Ok(v),
        Ok(_) => Err(CliError::usage("seed list is empty".into())),
        Err(e) => Err(CliError::usage(format!("bad seed list `{raw}`: {e}"))),
    }
}
