//! Gradient oracles for the total-expected-revenue potential: the exact full
//! gradient, per-agent stochastic oracles (exact response or one observed
//! sale), the infinite-population oracle, and smoothness constants.

use rand::{Rng, RngCore};

use crate::consumer::{
    choice_probabilities, expected_surplus, probabilities_for_column, sample_choice,
    sample_for_column, surplus_for_column,
};
use crate::error::{Error, Result};
use crate::instance::{MarketInstance, SupplierSpec};
use crate::supplier::{best_response, revenue};
use crate::vecmath::norm2;

/// Which market participant produced a gradient sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentId {
    Supplier(usize),
    Consumer(usize),
    /// Drawn from an infinite-population model rather than a finite roster.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    /// Exact per-agent gradient: a supplier's best response or a consumer's
    /// full choice distribution.
    ExactAgent,
    /// Consumer side replaced by one observed sale (negated one-hot).
    SampledSale,
    /// Deterministic sum over all agents.
    Full,
}

/// One gradient-oracle response. `oracle_calls` counts the agent
/// observations consumed: 1 for the stochastic kinds, `S + D` for the full
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub g: Vec<f64>,
    pub agent: AgentId,
    pub kind: SampleKind,
    pub oracle_calls: u64,
}

/// Total expected revenue `f(p)`: supplier maximal revenues plus consumer
/// expected surpluses. Convex in `p`.
pub fn potential(instance: &MarketInstance, p: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for spec in &instance.suppliers {
        total += revenue(spec, p)?;
    }
    for d in 0..instance.num_consumers() {
        total += expected_surplus(instance, d, p)?;
    }
    Ok(total)
}

/// Exact gradient of [`potential`]: supplier best responses minus consumer
/// choice probabilities, accumulated in agent order.
pub fn full_gradient(instance: &MarketInstance, p: &[f64]) -> Result<GradientSample> {
    let mut g = vec![0.0; instance.n()];
    for spec in &instance.suppliers {
        let resp = best_response(spec, p)?;
        for (gi, yi) in g.iter_mut().zip(&resp.y) {
            *gi += yi;
        }
    }
    for d in 0..instance.num_consumers() {
        let x = choice_probabilities(instance, d, p)?;
        for (gi, xi) in g.iter_mut().zip(x.values()) {
            *gi -= xi;
        }
    }
    Ok(GradientSample {
        g,
        agent: AgentId::Population,
        kind: SampleKind::Full,
        oracle_calls: instance.num_agents() as u64,
    })
}

fn split_agent(instance: &MarketInstance, agent: usize) -> Result<AgentId> {
    let s = instance.num_suppliers();
    if agent < s {
        Ok(AgentId::Supplier(agent))
    } else if agent < instance.num_agents() {
        Ok(AgentId::Consumer(agent - s))
    } else {
        Err(Error::IndexOutOfRange(format!(
            "agent {agent} (S + D = {})",
            instance.num_agents()
        )))
    }
}

/// Exact per-agent gradient: `y_s(p)` for suppliers, `-x_d(p)` for
/// consumers. Agents are indexed `0..S+D`, suppliers first. Averaging over
/// all agents reproduces `full_gradient / (S + D)`.
pub fn exact_agent_oracle(
    instance: &MarketInstance,
    agent: usize,
    p: &[f64],
) -> Result<GradientSample> {
    let id = split_agent(instance, agent)?;
    let g = match id {
        AgentId::Supplier(s) => best_response(&instance.suppliers[s], p)?.y,
        AgentId::Consumer(d) => choice_probabilities(instance, d, p)?
            .into_vec()
            .into_iter()
            .map(|x| -x)
            .collect(),
        AgentId::Population => unreachable!(),
    };
    Ok(GradientSample {
        g,
        agent: id,
        kind: SampleKind::ExactAgent,
        oracle_calls: 1,
    })
}

/// Observable per-agent gradient: suppliers respond exactly as in
/// [`exact_agent_oracle`]; a consumer contributes minus the one-hot vector
/// of a single sampled sale, an unbiased estimate of `-x_d(p)`.
pub fn sampled_oracle<R: Rng + ?Sized>(
    instance: &MarketInstance,
    agent: usize,
    p: &[f64],
    rng: &mut R,
) -> Result<GradientSample> {
    let id = split_agent(instance, agent)?;
    let g = match id {
        AgentId::Supplier(s) => best_response(&instance.suppliers[s], p)?.y,
        AgentId::Consumer(d) => {
            let sale = sample_choice(instance, d, p, rng)?;
            let mut g = vec![0.0; instance.n()];
            g[sale.chosen_index] = -1.0;
            g
        }
        AgentId::Population => unreachable!(),
    };
    Ok(GradientSample {
        g,
        agent: id,
        kind: SampleKind::SampledSale,
        oracle_calls: 1,
    })
}

/// Uniform draw over the `S + D` agents (0-based, suppliers first).
pub fn uniform_agent<R: Rng + ?Sized>(
    rng: &mut R,
    suppliers: usize,
    consumers: usize,
) -> Result<usize> {
    let total = suppliers + consumers;
    if total == 0 {
        return Err(Error::InvalidParameter(
            "cannot draw an agent from an empty market".into(),
        ));
    }
    Ok(rng.random_range(0..total))
}

/// Supplier distribution for the infinite-population model.
pub trait SupplierDistribution: Send + Sync {
    fn draw(&self, rng: &mut dyn RngCore) -> SupplierSpec;
}

/// Consumer distribution for the infinite-population model: draws one
/// utility vector (one entry per alternative).
pub trait ConsumerDistribution: Send + Sync {
    fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

/// Always returns the same supplier.
pub struct PointMassSuppliers(pub SupplierSpec);

impl SupplierDistribution for PointMassSuppliers {
    fn draw(&self, _rng: &mut dyn RngCore) -> SupplierSpec {
        self.0.clone()
    }
}

/// Always returns the same utility vector.
pub struct PointMassConsumers(pub Vec<f64>);

impl ConsumerDistribution for PointMassConsumers {
    fn draw(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.0.clone()
    }
}

/// Suppliers with a fixed adjustment weight and typical supply drawn
/// uniformly per component, mirroring the synthetic generator.
pub struct UniformBoxSuppliers {
    pub alternatives: usize,
    pub gamma: f64,
    pub cost_coeff: f64,
    pub y_hat_range: (f64, f64),
}

impl SupplierDistribution for UniformBoxSuppliers {
    fn draw(&self, rng: &mut dyn RngCore) -> SupplierSpec {
        let (lo, hi) = self.y_hat_range;
        SupplierSpec {
            gamma: self.gamma,
            y_hat: (0..self.alternatives)
                .map(|_| rng.random_range(lo..hi))
                .collect(),
            cost_coeff: self.cost_coeff,
        }
    }
}

/// Utility vectors drawn uniformly per component, mirroring the synthetic
/// generator.
pub struct UniformBoxConsumers {
    pub alternatives: usize,
    pub utility_range: (f64, f64),
}

impl ConsumerDistribution for UniformBoxConsumers {
    fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let (lo, hi) = self.utility_range;
        (0..self.alternatives)
            .map(|_| rng.random_range(lo..hi))
            .collect()
    }
}

/// Infinite-population market: a supplier fraction `beta`, distributions
/// over supplier specs and consumer utility vectors, and the group layout
/// used to interpret drawn utilities.
pub struct PopulationModel {
    beta: f64,
    groups: Vec<Vec<usize>>,
    mu: Vec<f64>,
    suppliers: Box<dyn SupplierDistribution>,
    consumers: Box<dyn ConsumerDistribution>,
}

impl PopulationModel {
    pub fn new(
        beta: f64,
        groups: Vec<Vec<usize>>,
        mu: Vec<f64>,
        suppliers: Box<dyn SupplierDistribution>,
        consumers: Box<dyn ConsumerDistribution>,
    ) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie strictly between 0 and 1, got {beta}"
            )));
        }
        if groups.len() != mu.len() || groups.iter().any(Vec::is_empty) {
            return Err(Error::InvalidParameter(
                "population model needs one mu per nonempty group".into(),
            ));
        }
        if mu.iter().any(|&m| !(m > 0.0 && m <= 1.0)) {
            return Err(Error::InvalidParameter("mu out of (0, 1]".into()));
        }
        Ok(Self {
            beta,
            groups,
            mu,
            suppliers,
            consumers,
        })
    }

    /// Population model matching a finite instance: point draws become
    /// uniform draws over the instance's own suppliers and consumers, with
    /// `beta = S / (S + D)`.
    pub fn from_instance(instance: &MarketInstance) -> Result<Self> {
        struct RosterSuppliers(Vec<SupplierSpec>);
        impl SupplierDistribution for RosterSuppliers {
            fn draw(&self, rng: &mut dyn RngCore) -> SupplierSpec {
                self.0[rng.random_range(0..self.0.len())].clone()
            }
        }
        struct RosterConsumers(Vec<Vec<f64>>);
        impl ConsumerDistribution for RosterConsumers {
            fn draw(&self, rng: &mut dyn RngCore) -> Vec<f64> {
                self.0[rng.random_range(0..self.0.len())].clone()
            }
        }
        let s = instance.num_suppliers();
        let d = instance.num_consumers();
        if s == 0 || d == 0 {
            return Err(Error::InvalidParameter(
                "population model from an instance needs both suppliers and consumers".into(),
            ));
        }
        let beta = s as f64 / (s + d) as f64;
        let columns = (0..d).map(|c| instance.utilities.column(c)).collect();
        Self::new(
            beta,
            instance.groups.clone(),
            instance.mu.clone(),
            Box::new(RosterSuppliers(instance.suppliers.clone())),
            Box::new(RosterConsumers(columns)),
        )
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alternatives(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    /// One draw of the population oracle: with probability `beta` a fresh
    /// supplier's best response, otherwise one sampled sale of a fresh
    /// consumer.
    pub fn oracle<R: Rng>(&self, p: &[f64], rng: &mut R) -> Result<GradientSample> {
        let branch: f64 = rng.random();
        let g = if branch < self.beta {
            let spec = self.suppliers.draw(rng);
            best_response(&spec, p)?.y
        } else {
            let util = self.consumers.draw(rng);
            let sale = sample_for_column(&self.groups, &self.mu, &util, p, rng);
            let mut g = vec![0.0; p.len()];
            g[sale.chosen_index] = -1.0;
            g
        };
        Ok(GradientSample {
            g,
            agent: AgentId::Population,
            kind: SampleKind::SampledSale,
            oracle_calls: 1,
        })
    }

    /// Monte-Carlo estimate of the population objective
    /// `beta * E[pi_s(p)] + (1 - beta) * E[E_d(p)]`.
    pub fn objective_estimate<R: Rng>(
        &self,
        p: &[f64],
        samples: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let mut pi_sum = 0.0;
        let mut surplus_sum = 0.0;
        for _ in 0..samples {
            let spec = self.suppliers.draw(rng);
            pi_sum += revenue(&spec, p)?;
            let util = self.consumers.draw(rng);
            surplus_sum += surplus_for_column(&self.groups, &self.mu, &util, p);
        }
        let k = samples as f64;
        Ok(self.beta * pi_sum / k + (1.0 - self.beta) * surplus_sum / k)
    }

    /// Exact expectation of the oracle for point-mass distributions is
    /// `beta * y_s(p) - (1 - beta) * x_d(p)`; used by tests and the
    /// self-check harness.
    pub fn expected_gradient_point_mass(
        &self,
        spec: &SupplierSpec,
        util: &[f64],
        p: &[f64],
    ) -> Result<Vec<f64>> {
        let y = best_response(spec, p)?.y;
        let x = probabilities_for_column(&self.groups, &self.mu, util, p);
        Ok(y.iter()
            .zip(x.values())
            .map(|(&yi, &xi)| self.beta * yi - (1.0 - self.beta) * xi)
            .collect())
    }
}

/// Gradient-smoothness constants: the aggregate `L` and one constant per
/// agent (`1/gamma_s` for suppliers, `1/min_j mu_j` for consumers).
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzConstants {
    pub full: f64,
    pub per_agent: Vec<f64>,
}

/// Smoothness constants of the potential. Any supplier with `gamma = 0`
/// makes the bound infinite; that returns [`Error::NonSmooth`] so callers
/// can fall back to the mirror-descent dynamic or smooth the instance first.
pub fn lipschitz_constants(instance: &MarketInstance) -> Result<LipschitzConstants> {
    if let Some((s, _)) = instance
        .suppliers
        .iter()
        .enumerate()
        .find(|(_, spec)| spec.gamma <= 0.0)
    {
        return Err(Error::NonSmooth(format!(
            "supplier {s} has gamma = 0; use the mirror-descent dynamic or smooth the instance"
        )));
    }
    let consumer_l = if instance.num_consumers() > 0 {
        1.0 / instance.min_mu()
    } else {
        0.0
    };
    let mut per_agent = Vec::with_capacity(instance.num_agents());
    for spec in &instance.suppliers {
        per_agent.push(1.0 / spec.gamma);
    }
    for _ in 0..instance.num_consumers() {
        per_agent.push(consumer_l);
    }
    Ok(LipschitzConstants {
        full: per_agent.iter().sum(),
        per_agent,
    })
}

/// Tighter valid descent constant used by the optimum estimator: the
/// supplier response `y_s` is linear with slope `1 / (2 (c_s + gamma_s))`,
/// and each consumer contributes at most `1 / min_j mu_j`.
pub(crate) fn descent_constant(instance: &MarketInstance) -> Result<f64> {
    let mut total = 0.0;
    for (s, spec) in instance.suppliers.iter().enumerate() {
        let curvature = spec.cost_coeff + spec.gamma;
        if curvature <= 0.0 {
            return Err(Error::Degenerate(format!(
                "supplier {s} has gamma = 0 and cost_coeff = 0"
            )));
        }
        total += 1.0 / (2.0 * curvature);
    }
    if instance.num_consumers() > 0 {
        total += instance.num_consumers() as f64 / instance.min_mu();
    }
    Ok(total)
}

/// Empirical bound on one stochastic sample: consumers contribute a one-hot
/// vector (norm exactly 1); suppliers are bounded by the closed-form
/// response at the given prices.
pub fn sample_norm_bound(instance: &MarketInstance, agent: usize, p: &[f64]) -> Result<f64> {
    match split_agent(instance, agent)? {
        AgentId::Supplier(s) => {
            let spec = &instance.suppliers[s];
            let denom = 2.0 * (spec.cost_coeff + spec.gamma);
            Ok((norm2(p) + 2.0 * spec.gamma * norm2(&spec.y_hat)) / denom)
        }
        AgentId::Consumer(_) => Ok(1.0),
        AgentId::Population => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consumer::tests::consumer_instance;
    use crate::instance::{
        generate_synthetic, GeneratorParams, MarketInstance, PriceVector, UtilityMatrix,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_market() -> MarketInstance {
        generate_synthetic(17, &GeneratorParams::new(5, 10, 20, 5, 1e-4)).unwrap()
    }

    fn supplier_only(gamma: f64, y_hat: Vec<f64>) -> MarketInstance {
        let n = y_hat.len();
        MarketInstance::new(
            vec![(0..n).collect()],
            vec![1.0],
            UtilityMatrix::new(n, 0, vec![]).unwrap(),
            vec![SupplierSpec::quadratic(gamma, y_hat)],
            PriceVector::zeros(n),
        )
        .unwrap()
    }

    #[test]
    fn potential_reduces_to_surplus_without_suppliers() {
        let inst = consumer_instance(vec![vec![0]], vec![1.0], vec![vec![2.0]]);
        let f = potential(&inst, &[0.5]).unwrap();
        assert!((f - 1.5).abs() < 1e-15);
    }

    #[test]
    fn potential_reduces_to_revenue_without_consumers() {
        let inst = supplier_only(0.7, vec![0.0, 0.0]);
        assert_eq!(potential(&inst, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn consumer_gradient_mass_sums_to_consumer_count() {
        let inst = consumer_instance(
            vec![vec![0, 1], vec![2]],
            vec![0.6, 0.9],
            vec![vec![1.0, 2.0, 0.5], vec![0.3, 0.4, 2.2]],
        );
        let g = full_gradient(&inst, &[0.1, 0.2, 0.3]).unwrap();
        let total: f64 = g.g.iter().sum();
        assert!((total + 2.0).abs() < 1e-12);
        assert_eq!(g.oracle_calls, 2);
    }

    #[test]
    fn supplier_only_gradient_matches_closed_form() {
        let inst = supplier_only(0.5, vec![1.0, 2.0]);
        let p = [1.0, 3.0];
        let g = full_gradient(&inst, &p).unwrap();
        for ((&pi, &yh), &gi) in p.iter().zip(&inst.suppliers[0].y_hat).zip(&g.g) {
            let expected = (pi + 2.0 * 0.5 * yh) / (2.0 * 1.5);
            assert!((gi - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_oracle_agents_partition_the_gradient() {
        let inst = small_market();
        let p = inst.p0.clone().into_vec();
        let full = full_gradient(&inst, &p).unwrap();
        let mut acc = vec![0.0; inst.n()];
        for agent in 0..inst.num_agents() {
            let s = exact_agent_oracle(&inst, agent, &p).unwrap();
            assert_eq!(s.oracle_calls, 1);
            for (a, gi) in acc.iter_mut().zip(&s.g) {
                *a += gi;
            }
        }
        for (a, f) in acc.iter().zip(&full.g) {
            assert!((a - f).abs() <= 1e-12);
        }
    }

    #[test]
    fn supplier_exact_sample_is_the_closed_form_response() {
        let inst = small_market();
        let p = inst.p0.clone().into_vec();
        let s = exact_agent_oracle(&inst, 0, &p).unwrap();
        assert_eq!(s.agent, AgentId::Supplier(0));
        let spec = &inst.suppliers[0];
        for i in 0..inst.n() {
            let expected =
                (p[i] + 2.0 * spec.gamma * spec.y_hat[i]) / (2.0 * (spec.cost_coeff + spec.gamma));
            assert!((s.g[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn consumer_exact_sample_is_negated_probability_vector() {
        let inst = small_market();
        let p = inst.p0.clone().into_vec();
        let s = exact_agent_oracle(&inst, inst.num_suppliers(), &p).unwrap();
        assert_eq!(s.agent, AgentId::Consumer(0));
        assert!(s.g.iter().all(|&v| v < 0.0 && v > -1.0));
        let total: f64 = s.g.iter().sum();
        assert!((total + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_oracle_supplier_branch_is_deterministic() {
        let inst = small_market();
        let p = inst.p0.clone().into_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sampled = sampled_oracle(&inst, 2, &p, &mut rng).unwrap();
        let exact = exact_agent_oracle(&inst, 2, &p).unwrap();
        assert_eq!(sampled.g, exact.g);
        assert!(sampled.g.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sampled_oracle_single_alternative_consumer() {
        let inst = consumer_instance(vec![vec![0]], vec![1.0], vec![vec![2.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = sampled_oracle(&inst, 0, &[0.3], &mut rng).unwrap();
            assert_eq!(s.g, vec![-1.0]);
        }
    }

    #[test]
    fn agent_index_out_of_range() {
        let inst = small_market();
        let p = inst.p0.clone().into_vec();
        assert!(matches!(
            exact_agent_oracle(&inst, inst.num_agents(), &p),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn uniform_agent_degenerate_market() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(uniform_agent(&mut rng, 1, 0).unwrap(), 0);
        }
        assert!(uniform_agent(&mut rng, 0, 0).is_err());
    }

    #[test]
    fn lemma_constants_hand_checked() {
        let mut inst = consumer_instance(
            vec![vec![0], vec![1]],
            vec![0.5, 1.0],
            vec![vec![1.0, 1.0], vec![2.0, 1.0], vec![1.0, 2.0]],
        );
        inst.suppliers
            .push(SupplierSpec::quadratic(2.0, vec![0.0, 0.0]));
        let l = lipschitz_constants(&inst).unwrap();
        assert_eq!(l.full, 0.5 + 3.0 / 0.5);
        assert_eq!(l.per_agent, vec![0.5, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn small_market_supplier_term_dominates() {
        let inst = small_market();
        let l = lipschitz_constants(&inst).unwrap();
        let supplier_term: f64 = l.per_agent[..5].iter().sum();
        assert!((supplier_term - 5.0e4).abs() < 1e-6);
        assert!(l.full > 5.0e4);
    }

    #[test]
    fn zero_gamma_flags_non_smooth() {
        let inst = generate_synthetic(3, &GeneratorParams::new(2, 2, 4, 2, 0.0)).unwrap();
        assert!(matches!(
            lipschitz_constants(&inst),
            Err(Error::NonSmooth(_))
        ));
    }

    #[test]
    fn point_mass_population_matches_reduced_expectation() {
        let inst = small_market();
        let p = inst.p0.clone().into_vec();
        let spec = inst.suppliers[0].clone();
        let util = inst.utilities.column(0);
        let model = PopulationModel::new(
            0.4,
            inst.groups.clone(),
            inst.mu.clone(),
            Box::new(PointMassSuppliers(spec.clone())),
            Box::new(PointMassConsumers(util.clone())),
        )
        .unwrap();
        let expected = model
            .expected_gradient_point_mass(&spec, &util, &p)
            .unwrap();
        let y = best_response(&spec, &p).unwrap().y;
        let x = choice_probabilities(&inst, 0, &p).unwrap();
        for i in 0..inst.n() {
            assert!((expected[i] - (0.4 * y[i] - 0.6 * x.values()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn population_model_rejects_bad_beta() {
        let inst = small_market();
        assert!(PopulationModel::new(
            1.0,
            inst.groups.clone(),
            inst.mu.clone(),
            Box::new(PointMassSuppliers(inst.suppliers[0].clone())),
            Box::new(PointMassConsumers(inst.utilities.column(0))),
        )
        .is_err());
    }

    #[test]
    fn consumer_samples_have_unit_norm_bound() {
        let inst = small_market();
        let p = inst.p0.clone().into_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for agent in 0..inst.num_agents() {
            let bound = sample_norm_bound(&inst, agent, &p).unwrap();
            let s = sampled_oracle(&inst, agent, &p, &mut rng).unwrap();
            assert!(norm2(&s.g) <= bound + 1e-12, "agent {agent}");
        }
    }
}
