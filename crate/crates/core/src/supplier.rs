//! Supplier best response and maximal revenue, plus the dual-smoothing
//! rewrite that restores gradient smoothness when adjustment costs vanish.

use crate::error::{Error, Result};
use crate::instance::{MarketInstance, SupplierSpec};
use crate::vecmath::dot;

/// Revenue-maximizing supply plan and the revenue it earns.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplierResponse {
    pub y: Vec<f64>,
    pub revenue: f64,
}

/// Maximizes `<y, p> - cost_coeff * ||y||^2 - gamma * ||y - y_hat||^2` over
/// the nonnegative orthant.
///
/// The objective is separable and strongly concave whenever
/// `cost_coeff + gamma > 0`, with unconstrained maximizer
/// `y_i = (p_i + 2 gamma y_hat_i) / (2 (cost_coeff + gamma))`. For
/// nonnegative prices that point already lies in the orthant; the clamp only
/// binds for negative price coordinates (which momentum-extrapolated
/// evaluation points may produce).
pub fn best_response(spec: &SupplierSpec, p: &[f64]) -> Result<SupplierResponse> {
    assert_eq!(p.len(), spec.y_hat.len(), "price vector length mismatch");
    if spec.is_degenerate() {
        return Err(Error::Degenerate(
            "gamma = 0 and cost_coeff = 0: revenue is unbounded for positive prices".into(),
        ));
    }
    let denom = 2.0 * (spec.cost_coeff + spec.gamma);
    let y: Vec<f64> = p
        .iter()
        .zip(&spec.y_hat)
        .map(|(&pi, &yh)| ((pi + 2.0 * spec.gamma * yh) / denom).max(0.0))
        .collect();
    let revenue = objective(spec, &y, p);
    Ok(SupplierResponse { y, revenue })
}

/// Maximal revenue of the supplier at prices `p`; convex in `p`.
pub fn revenue(spec: &SupplierSpec, p: &[f64]) -> Result<f64> {
    best_response(spec, p).map(|r| r.revenue)
}

pub(crate) fn objective(spec: &SupplierSpec, y: &[f64], p: &[f64]) -> f64 {
    let cost: f64 = spec.cost_coeff * dot(y, y);
    let adjust: f64 = spec.gamma
        * y.iter()
            .zip(&spec.y_hat)
            .map(|(&yi, &yh)| (yi - yh) * (yi - yh))
            .sum::<f64>();
    dot(y, p) - cost - adjust
}

/// Instance rewritten so every zero-adjustment supplier carries a synthetic
/// penalty `eta * ||y - anchor||^2` with `eta = eps / (2 radius^2)`.
///
/// Minimizing the rewritten potential to `eps / 2` accuracy yields an
/// `eps`-accurate minimizer of the original, provided the original best
/// responses stay within `radius` of the anchor.
#[derive(Debug, Clone)]
pub struct SmoothedInstance {
    pub instance: MarketInstance,
    pub eta: f64,
    pub target_eps: f64,
    pub radius: f64,
    pub anchor: Vec<f64>,
    /// Indices of the suppliers that were rewritten; empty means the
    /// transform was a no-op (nothing had gamma = 0).
    pub rewritten: Vec<usize>,
}

impl SmoothedInstance {
    /// True when no supplier needed smoothing.
    pub fn is_noop(&self) -> bool {
        self.rewritten.is_empty()
    }
}

/// Applies the dual-smoothing rewrite. `anchor` defaults to the zero supply
/// plan when `None`.
pub fn smooth(
    instance: &MarketInstance,
    eps: f64,
    radius: f64,
    anchor: Option<&[f64]>,
) -> Result<SmoothedInstance> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "target eps must be positive, got {eps}"
        )));
    }
    if !radius.is_finite() || radius <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let anchor: Vec<f64> = match anchor {
        Some(a) => {
            if a.len() != instance.n() {
                return Err(Error::InvalidParameter(format!(
                    "anchor needs {} entries, got {}",
                    instance.n(),
                    a.len()
                )));
            }
            if a.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::InvalidParameter(
                    "anchor entries must be finite and nonnegative".into(),
                ));
            }
            a.to_vec()
        }
        None => vec![0.0; instance.n()],
    };

    let eta = eps / (2.0 * radius * radius);
    let mut rewritten = Vec::new();
    let mut out = instance.clone();
    for (s, spec) in out.suppliers.iter_mut().enumerate() {
        if spec.gamma == 0.0 {
            spec.gamma = eta;
            spec.y_hat = anchor.clone();
            rewritten.push(s);
        }
    }

    Ok(SmoothedInstance {
        instance: out,
        eta,
        target_eps: eps,
        radius,
        anchor,
        rewritten,
    })
}

/// Gradient-smoothness constant of the rewritten potential: `2 R^2 / eps`
/// per smoothed supplier, `1 / gamma` per untouched supplier, and
/// `D / min_j mu_j` for the consumers.
pub fn smoothed_lipschitz(smoothed: &SmoothedInstance) -> f64 {
    let inst = &smoothed.instance;
    let smoothed_term = smoothed.rewritten.len() as f64 * 2.0 * smoothed.radius * smoothed.radius
        / smoothed.target_eps;
    let untouched_term: f64 = inst
        .suppliers
        .iter()
        .enumerate()
        .filter(|(s, _)| !smoothed.rewritten.contains(s))
        .map(|(_, spec)| 1.0 / spec.gamma)
        .sum();
    let consumer_term = if inst.num_consumers() == 0 {
        0.0
    } else {
        inst.num_consumers() as f64 / inst.min_mu()
    };
    smoothed_term + untouched_term + consumer_term
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_synthetic, GeneratorParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_prices_zero_typical_supply() {
        let spec = SupplierSpec::quadratic(0.5, vec![0.0, 0.0]);
        let r = best_response(&spec, &[0.0, 0.0]).unwrap();
        assert_eq!(r.y, vec![0.0, 0.0]);
        assert_eq!(r.revenue, 0.0);
    }

    #[test]
    fn hand_checked_point() {
        // p = 2, y_hat = 1, gamma = 1, unit cost: y = (2 + 2)/4 = 1,
        // revenue = 2 - 1 - 0 = 1.
        let spec = SupplierSpec::quadratic(1.0, vec![1.0]);
        let r = best_response(&spec, &[2.0]).unwrap();
        assert!((r.y[0] - 1.0).abs() < 1e-15);
        assert!((r.revenue - 1.0).abs() < 1e-15);
    }

    #[test]
    fn revenue_field_matches_objective_at_returned_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..6);
            let spec = SupplierSpec {
                gamma: rng.random_range(0.0..2.0),
                y_hat: (0..n).map(|_| rng.random_range(0.0..2.0)).collect(),
                cost_coeff: rng.random_range(0.2..2.0),
            };
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
            let r = best_response(&spec, &p).unwrap();
            assert!((r.revenue - objective(&spec, &r.y, &p)).abs() < 1e-12);
            assert!(r.y.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn degenerate_supplier_is_an_error() {
        let spec = SupplierSpec {
            gamma: 0.0,
            y_hat: vec![0.0],
            cost_coeff: 0.0,
        };
        assert!(matches!(
            best_response(&spec, &[1.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn zero_gamma_with_positive_cost_is_fine() {
        let spec = SupplierSpec {
            gamma: 0.0,
            y_hat: vec![0.7],
            cost_coeff: 1.0,
        };
        let r = best_response(&spec, &[3.0]).unwrap();
        assert!((r.y[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn best_response_is_lipschitz_in_prices() {
        // ||y(p) - y(q)|| = ||p - q|| / (2 (c + gamma)) <= ||p - q|| / gamma.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..5);
            let gamma = rng.random_range(0.05..2.0);
            let spec = SupplierSpec::quadratic(
                gamma,
                (0..n).map(|_| rng.random_range(0.0..2.0)).collect(),
            );
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
            let yp = best_response(&spec, &p).unwrap().y;
            let yq = best_response(&spec, &q).unwrap().y;
            let dy = crate::vecmath::dist2(&yp, &yq);
            let dp = crate::vecmath::dist2(&p, &q);
            assert!(dy <= dp / (2.0 * (spec.cost_coeff + gamma)) + 1e-12);
            assert!(dy <= dp / gamma + 1e-12);
        }
    }

    #[test]
    fn eta_from_eps_and_radius() {
        let inst = generate_synthetic(1, &GeneratorParams::new(2, 1, 4, 2, 0.0)).unwrap();
        let sm = smooth(&inst, 2.0, 1.0, None).unwrap();
        assert_eq!(sm.eta, 1.0);
        assert_eq!(sm.rewritten, vec![0, 1]);
        assert!(sm.instance.suppliers.iter().all(|s| s.gamma == 1.0));
        assert!(sm
            .instance
            .suppliers
            .iter()
            .all(|s| s.y_hat.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn smoothing_all_positive_gamma_is_noop_with_flag() {
        let inst = generate_synthetic(1, &GeneratorParams::new(2, 1, 4, 2, 0.3)).unwrap();
        let sm = smooth(&inst, 0.5, 1.0, None).unwrap();
        assert!(sm.is_noop());
        assert_eq!(sm.instance, inst);
    }

    #[test]
    fn smoothing_rejects_bad_parameters() {
        let inst = generate_synthetic(1, &GeneratorParams::new(1, 1, 2, 1, 0.0)).unwrap();
        assert!(smooth(&inst, 0.0, 1.0, None).is_err());
        assert!(smooth(&inst, 1.0, -2.0, None).is_err());
        assert!(smooth(&inst, 1.0, 1.0, Some(&[0.0])).is_err());
    }

    #[test]
    fn smoothed_lipschitz_single_supplier() {
        // One smoothed supplier, no consumers: L = 2 R^2 / eps = 4.
        let inst = crate::instance::MarketInstance::new(
            vec![vec![0]],
            vec![1.0],
            crate::instance::UtilityMatrix::new(1, 0, vec![]).unwrap(),
            vec![SupplierSpec::quadratic(0.0, vec![0.0])],
            crate::instance::PriceVector::zeros(1),
        )
        .unwrap();
        let sm = smooth(&inst, 0.5, 1.0, None).unwrap();
        assert_eq!(smoothed_lipschitz(&sm), 4.0);
    }

    #[test]
    fn smoothed_lipschitz_consumers_only() {
        // No suppliers, three consumers, min mu = 0.5: L = 6.
        let inst = crate::consumer::tests::consumer_instance(
            vec![vec![0], vec![1]],
            vec![0.5, 1.0],
            vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![1.5, 1.5]],
        );
        let sm = smooth(&inst, 1.0, 1.0, None).unwrap();
        assert!(sm.is_noop());
        assert_eq!(smoothed_lipschitz(&sm), 6.0);
    }

    #[test]
    fn smoothed_lipschitz_mixed_instance() {
        let mut inst = generate_synthetic(9, &GeneratorParams::new(3, 4, 6, 2, 0.25)).unwrap();
        inst.suppliers[1].gamma = 0.0;
        let (eps, radius) = (0.4, 2.0);
        let sm = smooth(&inst, eps, radius, None).unwrap();
        let expected = 2.0 * radius * radius / eps + 1.0 / 0.25 + 1.0 / 0.25 + 4.0 / inst.min_mu();
        assert!((smoothed_lipschitz(&sm) - expected).abs() < 1e-12);
    }
}
