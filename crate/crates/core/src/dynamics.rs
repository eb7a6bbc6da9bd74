//! Price-update dynamics: square-root-step stochastic descent, the adaptive
//! accumulator variant, the online population variant, mirror descent for
//! the non-smooth regime, and full-gradient baselines.
//!
//! Every dynamic keeps prices in the nonnegative orthant via the positive
//! part projection, maintains the running average of the iterates, and
//! records an objective trace at a configurable stride.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::instance::{MarketInstance, PriceVector};
use crate::oracles::{
    exact_agent_oracle, full_gradient, lipschitz_constants, potential, sampled_oracle,
    uniform_agent, PopulationModel,
};
use crate::vecmath::{add_assign, dist2, norm2, scaled};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Sgd,
    Adagrad,
    SgdOnline,
    Smd,
    Gd,
    Agd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sgd => "sgd",
            Algorithm::Adagrad => "adagrad",
            Algorithm::SgdOnline => "sgd-online",
            Algorithm::Smd => "smd",
            Algorithm::Gd => "gd",
            Algorithm::Agd => "agd",
        }
    }

    pub fn all() -> [Algorithm; 6] {
        [
            Algorithm::Sgd,
            Algorithm::Adagrad,
            Algorithm::SgdOnline,
            Algorithm::Smd,
            Algorithm::Gd,
            Algorithm::Agd,
        ]
    }

    /// True for the full-gradient baselines that spend `S + D` oracle calls
    /// per iteration.
    pub fn is_full_gradient(self) -> bool {
        matches!(self, Algorithm::Gd | Algorithm::Agd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::all()
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm `{s}`")))
    }
}

/// Which per-agent oracle drives a stochastic run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StochasticOracle {
    /// Exact agent responses (consumers reveal their full choice
    /// distribution).
    ExactAgent,
    /// Consumers reveal one sampled sale per observation.
    SampledSale,
}

/// Hyperparameters and bookkeeping knobs for one run.
#[derive(Debug, Clone)]
pub struct DynamicsConfig {
    pub algorithm: Algorithm,
    pub iterations: u64,
    /// Scales the `1/sqrt(t+1)` step of the stochastic dynamics.
    pub step_control: f64,
    /// Adaptive-step size parameter.
    pub eta: f64,
    /// Zero-division guard added under the adaptive square root.
    pub eps_div: f64,
    /// Iterate-distance bound for mirror descent.
    pub radius: Option<f64>,
    /// Gradient-norm bound for mirror descent.
    pub grad_bound: Option<f64>,
    pub seed: u64,
    pub oracle: StochasticOracle,
    /// Per-coordinate accumulator instead of the scalar one.
    pub adagrad_diagonal: bool,
    /// Record every `stride`-th iteration; `None` records every iteration up
    /// to 1000 and every 10th after that. The final iteration is always
    /// recorded.
    pub stride: Option<u64>,
    /// Optional early-stop threshold on the step norm (plain gradient
    /// descent only).
    pub gd_tol: Option<f64>,
    /// Reference value for the suboptimality column; `NaN` is recorded when
    /// absent.
    pub f_star: Option<f64>,
    /// Keep the full iterate trajectory in memory (tests and diagnostics).
    pub keep_iterates: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Sgd,
            iterations: 1000,
            step_control: 1.0,
            eta: 1.0,
            eps_div: 1e-8,
            radius: None,
            grad_bound: None,
            seed: 0,
            oracle: StochasticOracle::SampledSale,
            adagrad_diagonal: false,
            stride: None,
            gd_tol: None,
            f_star: None,
            keep_iterates: false,
        }
    }
}

impl DynamicsConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParameter(
                "iterations must be at least 1".into(),
            ));
        }
        match self.algorithm {
            Algorithm::Sgd | Algorithm::SgdOnline => {
                if !self.step_control.is_finite() || self.step_control <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "step control must be positive, got {}",
                        self.step_control
                    )));
                }
            }
            Algorithm::Adagrad => {
                if !self.eta.is_finite() || self.eta <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "eta must be positive, got {}",
                        self.eta
                    )));
                }
                if !self.eps_div.is_finite() || self.eps_div < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "eps_div must be nonnegative, got {}",
                        self.eps_div
                    )));
                }
            }
            Algorithm::Smd => {
                if !self.step_control.is_finite() || self.step_control <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "step control must be positive, got {}",
                        self.step_control
                    )));
                }
                match (self.radius, self.grad_bound) {
                    (Some(r), Some(m)) if r > 0.0 && m > 0.0 => {}
                    _ => {
                        return Err(Error::InvalidParameter(
                            "mirror descent needs positive radius and grad_bound".into(),
                        ))
                    }
                }
            }
            Algorithm::Gd | Algorithm::Agd => {}
        }
        Ok(())
    }
}

/// One trace row; `oracle_calls` is cumulative and `elapsed_s` is wall time
/// since the run started.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iter: u64,
    pub oracle_calls: u64,
    pub f: f64,
    pub subopt: f64,
    pub elapsed_s: f64,
}

/// Convergence record of one run.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    /// Objective at the starting prices (not an oracle call).
    pub f_initial: f64,
    /// The point the algorithm returns: the iterate average for the
    /// stochastic dynamics, the last iterate for the baselines.
    pub output: PriceVector,
    /// Running average of the iterates (excluding the starting point).
    pub average: PriceVector,
    pub average_count: u64,
    pub oracle_calls: u64,
    /// Largest gradient-sample norm observed.
    pub max_sample_norm: f64,
    /// Largest distance from the starting prices observed.
    pub max_distance: f64,
    /// Set when the step-norm stop fired before the iteration budget.
    pub stopped_early: Option<u64>,
    pub wall_time_s: f64,
    pub iterates: Option<Vec<Vec<f64>>>,
}

/// Running iterate average: mean = sum / count.
#[derive(Debug, Clone)]
pub struct PolyakAverage {
    sum: Vec<f64>,
    count: u64,
}

impl PolyakAverage {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn push(&mut self, point: &[f64]) {
        add_assign(&mut self.sum, point);
        self.count += 1;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Vec<f64> {
        scaled(&self.sum, 1.0 / self.count.max(1) as f64)
    }
}

/// Positive-part projected step `max(0, p - step * g)`, componentwise.
pub fn step_project(p: &[f64], g: &[f64], step: f64) -> Vec<f64> {
    debug_assert_eq!(p.len(), g.len());
    p.iter()
        .zip(g)
        .map(|(&pi, &gi)| (pi - step * gi).max(0.0))
        .collect()
}

fn should_record(iter: u64, total: u64, stride: Option<u64>) -> bool {
    let due = match stride {
        Some(k) => iter.is_multiple_of(k.max(1)),
        None => iter <= 1000 || iter.is_multiple_of(10),
    };
    due || iter == total
}

enum Evaluator<'a> {
    Finite(&'a MarketInstance),
    /// Monte-Carlo estimate of the population objective, re-seeded per
    /// record so traces stay deterministic and comparable across records.
    Population {
        model: &'a PopulationModel,
        samples: usize,
        seed: u64,
    },
}

impl Evaluator<'_> {
    fn eval(&self, p: &[f64]) -> Result<f64> {
        match self {
            Evaluator::Finite(inst) => potential(inst, p),
            Evaluator::Population {
                model,
                samples,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                model.objective_estimate(p, *samples, &mut rng)
            }
        }
    }
}

struct RunState<'a> {
    p: Vec<f64>,
    p0: Vec<f64>,
    average: PolyakAverage,
    oracle_calls: u64,
    max_sample_norm: f64,
    max_distance: f64,
    iterates: Option<Vec<Vec<f64>>>,
    evaluator: Evaluator<'a>,
    f_star: Option<f64>,
    records: Vec<TraceRecord>,
    started: Instant,
}

impl<'a> RunState<'a> {
    fn new(p0: Vec<f64>, evaluator: Evaluator<'a>, cfg: &DynamicsConfig) -> Self {
        let dim = p0.len();
        Self {
            p: p0.clone(),
            p0,
            average: PolyakAverage::new(dim),
            oracle_calls: 0,
            max_sample_norm: 0.0,
            max_distance: 0.0,
            iterates: cfg.keep_iterates.then(Vec::new),
            evaluator,
            f_star: cfg.f_star,
            records: Vec::new(),
            started: Instant::now(),
        }
    }

    fn advance(&mut self, next: Vec<f64>, sample_norm: f64, calls: u64) {
        self.p = next;
        self.average.push(&self.p);
        self.oracle_calls += calls;
        self.max_sample_norm = self.max_sample_norm.max(sample_norm);
        self.max_distance = self.max_distance.max(dist2(&self.p, &self.p0));
        if let Some(iterates) = &mut self.iterates {
            iterates.push(self.p.clone());
        }
    }

    fn record(&mut self, iter: u64, point: &[f64]) -> Result<()> {
        let f = self.evaluator.eval(point)?;
        let subopt = self.f_star.map_or(f64::NAN, |fs| f - fs);
        self.records.push(TraceRecord {
            iter,
            oracle_calls: self.oracle_calls,
            f,
            subopt,
            elapsed_s: self.started.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    fn finish(
        self,
        algorithm: Algorithm,
        seed: u64,
        f_initial: f64,
        output: Vec<f64>,
        stopped_early: Option<u64>,
    ) -> RunTrace {
        let wall_time_s = self.started.elapsed().as_secs_f64();
        RunTrace {
            algorithm,
            seed,
            records: self.records,
            f_initial,
            output: PriceVector::new(output).expect("projected iterates stay nonnegative"),
            average: PriceVector::new(self.average.mean())
                .expect("averaged iterates stay nonnegative"),
            average_count: self.average.count(),
            oracle_calls: self.oracle_calls,
            max_sample_norm: self.max_sample_norm,
            max_distance: self.max_distance,
            stopped_early,
            wall_time_s,
            iterates: self.iterates,
        }
    }
}

fn ensure_valid(instance: &MarketInstance) -> Result<()> {
    let violations = instance.validate();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(violations))
    }
}

/// Runs the configured dynamic on a finite instance.
///
/// `sgd-online` runs against the instance's own roster recast as an
/// infinite-population model with `beta = S / (S + D)`.
pub fn run(instance: &MarketInstance, cfg: &DynamicsConfig) -> Result<RunTrace> {
    cfg.validate()?;
    ensure_valid(instance)?;
    match cfg.algorithm {
        Algorithm::Sgd => run_sqrt_stochastic(instance, cfg, cfg.step_control, Algorithm::Sgd),
        Algorithm::Smd => {
            let (r, m) = (cfg.radius.unwrap(), cfg.grad_bound.unwrap());
            let coeff = cfg.step_control * r / m;
            run_sqrt_stochastic(instance, cfg, coeff, Algorithm::Smd)
        }
        Algorithm::Adagrad => run_adagrad(instance, cfg),
        Algorithm::Gd => run_full_gradient(instance, cfg, false),
        Algorithm::Agd => run_full_gradient(instance, cfg, true),
        Algorithm::SgdOnline => {
            let model = PopulationModel::from_instance(instance)?;
            run_online(&model, &instance.p0, OnlineObjective::Finite(instance), cfg)
        }
    }
}

fn run_sqrt_stochastic(
    instance: &MarketInstance,
    cfg: &DynamicsConfig,
    coeff: f64,
    algorithm: Algorithm,
) -> Result<RunTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f_initial = potential(instance, instance.p0.as_slice())?;
    let mut state = RunState::new(
        instance.p0.as_slice().to_vec(),
        Evaluator::Finite(instance),
        cfg,
    );
    let (s, d) = (instance.num_suppliers(), instance.num_consumers());
    for t in 0..cfg.iterations {
        let agent = uniform_agent(&mut rng, s, d)?;
        let sample = match cfg.oracle {
            StochasticOracle::ExactAgent => exact_agent_oracle(instance, agent, &state.p)?,
            StochasticOracle::SampledSale => sampled_oracle(instance, agent, &state.p, &mut rng)?,
        };
        let step = coeff / ((t + 1) as f64).sqrt();
        let next = step_project(&state.p, &sample.g, step);
        state.advance(next, norm2(&sample.g), 1);
        if should_record(t + 1, cfg.iterations, cfg.stride) {
            let mean = state.average.mean();
            state.record(t + 1, &mean)?;
        }
    }
    let output = state.average.mean();
    Ok(state.finish(algorithm, cfg.seed, f_initial, output, None))
}

enum AdaAccumulator {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

impl AdaAccumulator {
    /// Folds one gradient into the accumulator and takes the projected step.
    fn step(&mut self, p: &[f64], g: &[f64], eta: f64, eps: f64) -> Vec<f64> {
        match self {
            AdaAccumulator::Scalar(h) => {
                *h += crate::vecmath::dot(g, g);
                let factor = eta / (*h + eps).sqrt();
                step_project(p, g, factor)
            }
            AdaAccumulator::Diagonal(h) => p
                .iter()
                .zip(g)
                .zip(h)
                .map(|((&pi, &gi), hi)| {
                    *hi += gi * gi;
                    (pi - eta / (*hi + eps).sqrt() * gi).max(0.0)
                })
                .collect(),
        }
    }
}

fn run_adagrad(instance: &MarketInstance, cfg: &DynamicsConfig) -> Result<RunTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f_initial = potential(instance, instance.p0.as_slice())?;
    let mut state = RunState::new(
        instance.p0.as_slice().to_vec(),
        Evaluator::Finite(instance),
        cfg,
    );
    let mut acc = if cfg.adagrad_diagonal {
        AdaAccumulator::Diagonal(vec![0.0; instance.n()])
    } else {
        AdaAccumulator::Scalar(0.0)
    };
    let (s, d) = (instance.num_suppliers(), instance.num_consumers());
    for t in 0..cfg.iterations {
        let agent = uniform_agent(&mut rng, s, d)?;
        let sample = match cfg.oracle {
            StochasticOracle::ExactAgent => exact_agent_oracle(instance, agent, &state.p)?,
            StochasticOracle::SampledSale => sampled_oracle(instance, agent, &state.p, &mut rng)?,
        };
        let next = acc.step(&state.p, &sample.g, cfg.eta, cfg.eps_div);
        state.advance(next, norm2(&sample.g), 1);
        if should_record(t + 1, cfg.iterations, cfg.stride) {
            let mean = state.average.mean();
            state.record(t + 1, &mean)?;
        }
    }
    let output = state.average.mean();
    Ok(state.finish(Algorithm::Adagrad, cfg.seed, f_initial, output, None))
}

fn run_full_gradient(
    instance: &MarketInstance,
    cfg: &DynamicsConfig,
    accelerated: bool,
) -> Result<RunTrace> {
    let constants = lipschitz_constants(instance)?;
    let step = 1.0 / constants.full;
    let calls_per_iter = instance.num_agents() as u64;
    let f_initial = potential(instance, instance.p0.as_slice())?;
    let mut state = RunState::new(
        instance.p0.as_slice().to_vec(),
        Evaluator::Finite(instance),
        cfg,
    );

    let mut stopped_early = None;
    let mut extrapolated = state.p.clone();
    let mut x_prev = state.p.clone();
    let mut momentum_t = 1.0_f64;

    for t in 0..cfg.iterations {
        let iter = t + 1;
        let moved;
        if accelerated {
            let sample = full_gradient(instance, &extrapolated)?;
            let x_next = step_project(&extrapolated, &sample.g, step);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum_t * momentum_t).sqrt());
            let momentum = (momentum_t - 1.0) / t_next;
            extrapolated = x_next
                .iter()
                .zip(&x_prev)
                .map(|(&xn, &xp)| xn + momentum * (xn - xp))
                .collect();
            moved = dist2(&x_next, &x_prev);
            x_prev = x_next.clone();
            momentum_t = t_next;
            state.advance(x_next, norm2(&sample.g), calls_per_iter);
        } else {
            let sample = full_gradient(instance, &state.p)?;
            let next = step_project(&state.p, &sample.g, step);
            moved = dist2(&next, &state.p);
            state.advance(next, norm2(&sample.g), calls_per_iter);
        }

        // The baselines report the last iterate, not the running average.
        let stop = !accelerated && matches!(cfg.gd_tol, Some(tol) if moved <= tol);
        if should_record(iter, cfg.iterations, cfg.stride) || stop {
            let point = state.p.clone();
            state.record(iter, &point)?;
        }
        if stop {
            stopped_early = Some(iter);
            break;
        }
    }

    let algorithm = if accelerated {
        Algorithm::Agd
    } else {
        Algorithm::Gd
    };
    let output = state.p.clone();
    Ok(state.finish(algorithm, cfg.seed, f_initial, output, stopped_early))
}

/// How to evaluate the objective along an online run.
pub enum OnlineObjective<'a> {
    /// Score against a finite instance (the population is a mixture over its
    /// roster, or a stand-in chosen for reporting).
    Finite(&'a MarketInstance),
    /// Monte-Carlo estimate with `samples` fresh draws per record,
    /// reseeded from `seed` so records are deterministic.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Runs the online dynamic against an infinite-population model.
pub fn run_online(
    model: &PopulationModel,
    p0: &PriceVector,
    objective: OnlineObjective<'_>,
    cfg: &DynamicsConfig,
) -> Result<RunTrace> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidParameter(
            "iterations must be at least 1".into(),
        ));
    }
    if !cfg.step_control.is_finite() || cfg.step_control <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "step control must be positive, got {}",
            cfg.step_control
        )));
    }
    if p0.len() != model.alternatives() {
        return Err(Error::InvalidParameter(format!(
            "starting prices have {} entries, model has {} alternatives",
            p0.len(),
            model.alternatives()
        )));
    }

    let evaluator = match objective {
        OnlineObjective::Finite(inst) => Evaluator::Finite(inst),
        OnlineObjective::MonteCarlo { samples, seed } => Evaluator::Population {
            model,
            samples,
            seed,
        },
    };
    let f_initial = evaluator.eval(p0.as_slice())?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = RunState::new(p0.as_slice().to_vec(), evaluator, cfg);
    for t in 0..cfg.iterations {
        let sample = model.oracle(&state.p, &mut rng)?;
        let step = cfg.step_control / ((t + 1) as f64).sqrt();
        let next = step_project(&state.p, &sample.g, step);
        state.advance(next, norm2(&sample.g), 1);
        if should_record(t + 1, cfg.iterations, cfg.stride) {
            let mean = state.average.mean();
            state.record(t + 1, &mean)?;
        }
    }
    let output = state.average.mean();
    Ok(state.finish(Algorithm::SgdOnline, cfg.seed, f_initial, output, None))
}
