//! Nested-logit consumer model: expected surplus, choice probabilities, and
//! one-hot sale sampling.
//!
//! All evaluation goes through max-subtracted exponentials, so small group
//! correlation parameters and large utility-price gaps stay finite. The
//! column-level functions exist so the infinite-population oracle can score
//! freshly drawn utility vectors without building a full instance.

use rand::Rng;

use crate::error::{Error, Result};
use crate::instance::MarketInstance;

/// Choice distribution over the alternatives: entries sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceProbabilities {
    x: Vec<f64>,
}

impl ChoiceProbabilities {
    pub fn values(&self) -> &[f64] {
        &self.x
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.x
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// One observed sale: exactly one alternative chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaleSample {
    pub chosen_index: usize,
    alternatives: usize,
}

impl SaleSample {
    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.alternatives];
        v[self.chosen_index] = 1.0;
        v
    }

    pub fn alternatives(&self) -> usize {
        self.alternatives
    }
}

/// Expected surplus of consumer `d` at prices `p`.
pub fn expected_surplus(instance: &MarketInstance, d: usize, p: &[f64]) -> Result<f64> {
    let util = consumer_column(instance, d, p)?;
    Ok(surplus_for_column(&instance.groups, &instance.mu, &util, p))
}

/// Probability of each alternative being chosen by consumer `d`; also equals
/// minus the price gradient of [`expected_surplus`].
pub fn choice_probabilities(
    instance: &MarketInstance,
    d: usize,
    p: &[f64],
) -> Result<ChoiceProbabilities> {
    let util = consumer_column(instance, d, p)?;
    Ok(probabilities_for_column(
        &instance.groups,
        &instance.mu,
        &util,
        p,
    ))
}

/// Samples one sale of consumer `d`, distributed per [`choice_probabilities`].
pub fn sample_choice<R: Rng + ?Sized>(
    instance: &MarketInstance,
    d: usize,
    p: &[f64],
    rng: &mut R,
) -> Result<SaleSample> {
    let util = consumer_column(instance, d, p)?;
    Ok(sample_for_column(
        &instance.groups,
        &instance.mu,
        &util,
        p,
        rng,
    ))
}

fn consumer_column(instance: &MarketInstance, d: usize, p: &[f64]) -> Result<Vec<f64>> {
    if d >= instance.num_consumers() {
        return Err(Error::IndexOutOfRange(format!(
            "consumer {d} (D = {})",
            instance.num_consumers()
        )));
    }
    assert_eq!(p.len(), instance.n(), "price vector length mismatch");
    Ok(instance.utilities.column(d))
}

/// Group value `t_j = b_j + mu_j * ln sum_i exp((z_i - b_j)/mu_j)` with
/// `b_j = max_i z_i`, `z_i = util_i - p_i` over the group's alternatives.
fn group_term(group: &[usize], mu_j: f64, util: &[f64], p: &[f64]) -> f64 {
    let b = group
        .iter()
        .map(|&i| util[i] - p[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = group
        .iter()
        .map(|&i| ((util[i] - p[i] - b) / mu_j).exp())
        .sum();
    b + mu_j * sum.ln()
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

/// Expected surplus for an explicit utility column.
pub fn surplus_for_column(groups: &[Vec<usize>], mu: &[f64], util: &[f64], p: &[f64]) -> f64 {
    let terms: Vec<f64> = groups
        .iter()
        .zip(mu)
        .map(|(g, &mu_j)| group_term(g, mu_j, util, p))
        .collect();
    log_sum_exp(&terms)
}

/// Choice probabilities for an explicit utility column, factorized as
/// P(group) * P(alternative | group); each factor is a stable softmax.
pub fn probabilities_for_column(
    groups: &[Vec<usize>],
    mu: &[f64],
    util: &[f64],
    p: &[f64],
) -> ChoiceProbabilities {
    let terms: Vec<f64> = groups
        .iter()
        .zip(mu)
        .map(|(g, &mu_j)| group_term(g, mu_j, util, p))
        .collect();
    let t_max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = terms.iter().map(|&t| (t - t_max).exp()).collect();
    let denom: f64 = weights.iter().sum();

    let mut x = vec![0.0; p.len()];
    for ((group, &mu_j), w) in groups.iter().zip(mu).zip(&weights) {
        let group_prob = w / denom;
        let b = group
            .iter()
            .map(|&i| util[i] - p[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let inner: Vec<f64> = group
            .iter()
            .map(|&i| ((util[i] - p[i] - b) / mu_j).exp())
            .collect();
        let inner_sum: f64 = inner.iter().sum();
        for (&i, e) in group.iter().zip(&inner) {
            x[i] = group_prob * e / inner_sum;
        }
    }
    ChoiceProbabilities { x }
}

/// Two-stage sale sampling: group first, alternative within the group second.
pub fn sample_for_column<R: Rng + ?Sized>(
    groups: &[Vec<usize>],
    mu: &[f64],
    util: &[f64],
    p: &[f64],
    rng: &mut R,
) -> SaleSample {
    let terms: Vec<f64> = groups
        .iter()
        .zip(mu)
        .map(|(g, &mu_j)| group_term(g, mu_j, util, p))
        .collect();
    let t_max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = terms.iter().map(|&t| (t - t_max).exp()).collect();
    let j = sample_index(&weights, rng);

    let group = &groups[j];
    let mu_j = mu[j];
    let b = group
        .iter()
        .map(|&i| util[i] - p[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let inner: Vec<f64> = group
        .iter()
        .map(|&i| ((util[i] - p[i] - b) / mu_j).exp())
        .collect();
    let k = sample_index(&inner, rng);

    SaleSample {
        chosen_index: group[k],
        alternatives: p.len(),
    }
}

/// Draws an index proportionally to nonnegative weights. The max-subtracted
/// weights always contain at least one entry equal to 1, so the total is
/// positive even when everything else underflows.
fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}
