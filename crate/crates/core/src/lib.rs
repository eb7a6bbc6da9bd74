//! Market-clearing price search.
//!
//! A marketplace of quantity-adjusting suppliers and nested-logit consumers
//! admits a convex potential — total expected revenue — whose minimizer
//! balances aggregate supply and demand. This crate builds such markets
//! ([`instance`]), evaluates both sides ([`supplier`], [`consumer`]),
//! exposes exact and observation-cheap stochastic gradient oracles
//! ([`oracles`]), and drives prices to equilibrium with projected
//! stochastic dynamics ([`dynamics`]). The [`harness`] module reproduces
//! full oracle-budget comparisons between the stochastic dynamics and
//! full-gradient baselines, writing traces, summaries, and a manifest.

pub mod consumer;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod instance;
pub mod io;
pub mod oracles;
pub mod supplier;
mod vecmath;

pub use consumer::{
    choice_probabilities, expected_surplus, sample_choice, ChoiceProbabilities, SaleSample,
};
pub use dynamics::{
    run, run_online, step_project, Algorithm, DynamicsConfig, OnlineObjective, RunTrace,
    StochasticOracle, TraceRecord,
};
pub use error::{Error, Result, Violation};
pub use harness::{
    compare, estimate_optimum, self_test, ComparisonOutcome, ExperimentSpec, InstanceSource,
    OptimumEstimate, StopReason, SummaryRow,
};
pub use instance::{
    generate_synthetic, GeneratorParams, MarketInstance, PriceVector, SupplierSpec, UtilityMatrix,
};
pub use oracles::{
    exact_agent_oracle, full_gradient, lipschitz_constants, potential, sampled_oracle,
    uniform_agent, AgentId, GradientSample, LipschitzConstants, PopulationModel, SampleKind,
};
pub use supplier::{
    best_response, revenue, smooth, smoothed_lipschitz, SmoothedInstance, SupplierResponse,
};
