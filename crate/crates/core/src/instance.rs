//! Market problem data: product groups, consumer utilities, supplier specs,
//! plus the seeded synthetic-instance generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result, Violation};

/// Nonnegative price vector, one entry per product alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, &v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "price[{i}] = {v} must be finite and nonnegative"
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for PriceVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One supplier: quantity-adjustment weight `gamma`, typical supply `y_hat`,
/// and quadratic production cost `cost_coeff * ||y||^2`.
///
/// `gamma == 0` marks the regime where the potential loses its smoothness
/// guarantee; see [`crate::supplier::smooth`].
#[derive(Debug, Clone, PartialEq)]
pub struct SupplierSpec {
    pub gamma: f64,
    pub y_hat: Vec<f64>,
    pub cost_coeff: f64,
}

impl SupplierSpec {
    /// Supplier with unit quadratic cost.
    pub fn quadratic(gamma: f64, y_hat: Vec<f64>) -> Self {
        Self {
            gamma,
            y_hat,
            cost_coeff: 1.0,
        }
    }

    /// True when the revenue objective has no strongly concave term, i.e.
    /// best response is unbounded for any positive price.
    pub fn is_degenerate(&self) -> bool {
        self.gamma <= 0.0 && self.cost_coeff <= 0.0
    }
}

/// Consumer utility matrix, `alternatives x consumers`, all entries positive.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityMatrix {
    alternatives: usize,
    consumers: usize,
    /// Row-major: `data[i * consumers + d]` is consumer `d`'s utility for
    /// alternative `i`.
    data: Vec<f64>,
}

impl UtilityMatrix {
    pub fn new(alternatives: usize, consumers: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != alternatives * consumers {
            return Err(Error::InvalidParameter(format!(
                "utility matrix needs {} entries ({} x {}), got {}",
                alternatives * consumers,
                alternatives,
                consumers,
                data.len()
            )));
        }
        Ok(Self {
            alternatives,
            consumers,
            data,
        })
    }

    pub fn alternatives(&self) -> usize {
        self.alternatives
    }

    pub fn consumers(&self) -> usize {
        self.consumers
    }

    pub fn get(&self, alternative: usize, consumer: usize) -> f64 {
        debug_assert!(alternative < self.alternatives && consumer < self.consumers);
        self.data[alternative * self.consumers + consumer]
    }

    /// Utility column of one consumer, one value per alternative.
    pub fn column(&self, consumer: usize) -> Vec<f64> {
        (0..self.alternatives)
            .map(|i| self.get(i, consumer))
            .collect()
    }

    /// Utility row of one alternative, one value per consumer.
    pub fn row(&self, alternative: usize) -> &[f64] {
        let start = alternative * self.consumers;
        &self.data[start..start + self.consumers]
    }
}

/// Full market description: `m` disjoint groups partitioning the `n`
/// alternatives, per-group correlation parameters `mu`, a consumer utility
/// matrix, supplier specs, and the starting prices `p0`.
///
/// Instances are plain data; run [`MarketInstance::validate`] (or construct
/// through [`MarketInstance::new`]) before handing one to the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketInstance {
    /// 0-based alternative indices, one vec per group.
    pub groups: Vec<Vec<usize>>,
    /// Correlation parameter per group, each in (0, 1].
    pub mu: Vec<f64>,
    pub utilities: UtilityMatrix,
    pub suppliers: Vec<SupplierSpec>,
    pub p0: PriceVector,
}

impl MarketInstance {
    /// Validating constructor.
    pub fn new(
        groups: Vec<Vec<usize>>,
        mu: Vec<f64>,
        utilities: UtilityMatrix,
        suppliers: Vec<SupplierSpec>,
        p0: PriceVector,
    ) -> Result<Self> {
        let instance = Self {
            groups,
            mu,
            utilities,
            suppliers,
            p0,
        };
        let violations = instance.validate();
        if violations.is_empty() {
            Ok(instance)
        } else {
            Err(Error::Validation(violations))
        }
    }

    /// Number of product alternatives.
    pub fn n(&self) -> usize {
        self.utilities.alternatives()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn num_consumers(&self) -> usize {
        self.utilities.consumers()
    }

    pub fn num_suppliers(&self) -> usize {
        self.suppliers.len()
    }

    /// Total agent count `S + D`; stochastic oracles index agents in
    /// `0..num_agents()`, suppliers first.
    pub fn num_agents(&self) -> usize {
        self.num_suppliers() + self.num_consumers()
    }

    /// Smallest correlation parameter across groups.
    pub fn min_mu(&self) -> f64 {
        self.mu.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True when every supplier has a positive adjustment weight, so the
    /// potential has the finite smoothness constant of
    /// [`crate::oracles::lipschitz_constants`].
    pub fn is_smooth(&self) -> bool {
        self.suppliers.iter().all(|s| s.gamma > 0.0)
    }

    /// Checks every invariant and returns the full list of violations
    /// (empty means the instance is valid).
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let n = self.n();

        if n == 0 {
            out.push(Violation::new("n", "at least one alternative is required"));
        }
        if self.num_agents() == 0 {
            out.push(Violation::new(
                "suppliers/consumers",
                "at least one agent (supplier or consumer) is required",
            ));
        }

        // Groups: exact partition of 0..n, every group nonempty.
        if self.groups.is_empty() && n > 0 {
            out.push(Violation::new("groups", "at least one group is required"));
        }
        let mut seen = vec![0usize; n];
        for (j, group) in self.groups.iter().enumerate() {
            if group.is_empty() {
                out.push(Violation::new(format!("groups[{j}]"), "group is empty"));
            }
            for &i in group {
                if i >= n {
                    out.push(Violation::new(
                        format!("groups[{j}]"),
                        format!("alternative index {i} out of range (n = {n})"),
                    ));
                } else {
                    seen[i] += 1;
                }
            }
        }
        if seen.iter().any(|&c| c > 1) {
            out.push(Violation::new("groups", "groups are not disjoint"));
        }
        if seen.contains(&0) {
            out.push(Violation::new(
                "groups",
                "groups do not cover every alternative",
            ));
        }

        if self.mu.len() != self.groups.len() {
            out.push(Violation::new(
                "mu",
                format!(
                    "expected one correlation parameter per group ({} != {})",
                    self.mu.len(),
                    self.groups.len()
                ),
            ));
        }
        for (j, &mu) in self.mu.iter().enumerate() {
            if !mu.is_finite() || mu <= 0.0 || mu > 1.0 {
                out.push(Violation::new(format!("mu[{j}]"), "mu out of (0, 1]"));
            }
        }

        for d in 0..self.num_consumers() {
            for i in 0..n {
                let a = self.utilities.get(i, d);
                if !a.is_finite() || a <= 0.0 {
                    out.push(Violation::new(
                        format!("A[{i}][{d}]"),
                        "utility entries must be positive",
                    ));
                }
            }
        }

        for (s, spec) in self.suppliers.iter().enumerate() {
            if !spec.gamma.is_finite() || spec.gamma < 0.0 {
                out.push(Violation::new(
                    format!("suppliers[{s}].gamma"),
                    "gamma must be finite and nonnegative",
                ));
            }
            if !spec.cost_coeff.is_finite() || spec.cost_coeff < 0.0 {
                out.push(Violation::new(
                    format!("suppliers[{s}].cost_coeff"),
                    "cost coefficient must be finite and nonnegative",
                ));
            }
            if spec.y_hat.len() != n {
                out.push(Violation::new(
                    format!("suppliers[{s}].y_hat"),
                    format!("expected {} entries, got {}", n, spec.y_hat.len()),
                ));
            }
            if spec.y_hat.iter().any(|&v| !v.is_finite() || v < 0.0) {
                out.push(Violation::new(
                    format!("suppliers[{s}].y_hat"),
                    "typical supply must be finite and nonnegative",
                ));
            }
        }

        if self.p0.len() != n {
            out.push(Violation::new(
                "p0",
                format!("expected {} entries, got {}", n, self.p0.len()),
            ));
        }

        out
    }
}

/// Parameters for [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub suppliers: usize,
    pub consumers: usize,
    pub alternatives: usize,
    pub groups: usize,
    /// Adjustment weight assigned to every generated supplier.
    pub gamma: f64,
    /// Bounds for the i.i.d. uniform utility entries.
    pub utility_range: (f64, f64),
}

impl GeneratorParams {
    pub fn new(
        suppliers: usize,
        consumers: usize,
        alternatives: usize,
        groups: usize,
        gamma: f64,
    ) -> Self {
        Self {
            suppliers,
            consumers,
            alternatives,
            groups,
            gamma,
            utility_range: (0.01, 5.0),
        }
    }
}

/// Generates a random instance. Same seed and parameters always produce the
/// same instance.
///
/// Layout: groups are `m` near-equal contiguous blocks of the alternatives;
/// `y_hat ~ U[0.01, 2]` per component, `mu ~ U[0.1, 1]`, utilities uniform
/// over `params.utility_range`, and `p0 ~ U[0.01, 5]` rescaled so its largest
/// component is exactly 1.
pub fn generate_synthetic(seed: u64, params: &GeneratorParams) -> Result<MarketInstance> {
    let n = params.alternatives;
    let m = params.groups;
    let (s_count, d_count) = (params.suppliers, params.consumers);

    if n == 0 || m == 0 || n < m {
        return Err(Error::InvalidParameter(format!(
            "need alternatives >= groups >= 1, got n = {n}, m = {m}"
        )));
    }
    if s_count + d_count == 0 {
        return Err(Error::InvalidParameter(
            "need at least one supplier or consumer".into(),
        ));
    }
    if !params.gamma.is_finite() || params.gamma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gamma must be finite and nonnegative, got {}",
            params.gamma
        )));
    }
    let (u_lo, u_hi) = params.utility_range;
    if !(u_lo > 0.0 && u_hi > u_lo) {
        return Err(Error::InvalidParameter(format!(
            "utility range must satisfy 0 < low < high, got ({u_lo}, {u_hi})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Draw order is part of the determinism contract: supplier supplies,
    // then initial prices, then utility columns, then mu.
    let suppliers: Vec<SupplierSpec> = (0..s_count)
        .map(|_| {
            let y_hat = (0..n).map(|_| rng.random_range(0.01..2.0)).collect();
            SupplierSpec::quadratic(params.gamma, y_hat)
        })
        .collect();

    let mut p0: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..5.0)).collect();
    let p_max = p0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for p in &mut p0 {
        *p /= p_max;
    }

    let mut data = vec![0.0; n * d_count];
    for d in 0..d_count {
        for i in 0..n {
            data[i * d_count + d] = rng.random_range(u_lo..u_hi);
        }
    }
    let utilities = UtilityMatrix::new(n, d_count, data)?;

    let mu: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();

    let groups = contiguous_blocks(n, m);

    MarketInstance::new(groups, mu, utilities, suppliers, PriceVector::new(p0)?)
}

/// Splits `0..n` into `m` contiguous blocks whose sizes differ by at most one.
fn contiguous_blocks(n: usize, m: usize) -> Vec<Vec<usize>> {
    let base = n / m;
    let extra = n % m;
    let mut groups = Vec::with_capacity(m);
    let mut next = 0;
    for j in 0..m {
        let size = base + usize::from(j < extra);
        groups.push((next..next + size).collect());
        next += size;
    }
    groups
}
