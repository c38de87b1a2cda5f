//! Offline oracles: exact welfare maximization by pruned enumeration at
//! desk scale, a dual-feasible upper bound valid at any scale, and the
//! empirical-ratio report combining them with an online run's welfare.
//!
//! The chain `w_online <= w_opt <= dual bound` holds for every instance:
//! the dual bound prices each (resource, slot) pair and pays out each
//! customer's best surplus at those prices plus the conjugate of the cost
//! at each price, which upper-bounds any feasible allocation's welfare.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::instances::ArrivalInstance;
use crate::pricing::ResourceSetup;

/// Enumeration is allowed when `n * log2(bundles) <= ENUMERATION_BUDGET`,
/// i.e. at most ~2^40 assignments before pruning.
pub const ENUMERATION_BUDGET: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    BudgetExceeded { n: usize, bundles: usize },
}

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleError::BudgetExceeded { n, bundles } => write!(
                f,
                "exact enumeration budget exceeded: {n} customers x {bundles} bundles"
            ),
        }
    }
}

impl std::error::Error for OracleError {}

pub fn within_enumeration_budget(n: usize, bundles: usize) -> bool {
    if n == 0 {
        return true;
    }
    (n as f64) * (bundles.max(2) as f64).log2() <= ENUMERATION_BUDGET + 1e-9
}

struct Enumerator<'a> {
    instance: &'a ArrivalInstance,
    resources: &'a [ResourceSetup],
    /// Best possible remaining value from customer i on: sum of each
    /// later customer's highest valuation clipped at zero. Admissible
    /// because costs only subtract.
    suffix_value: Vec<f64>,
    utilization: Vec<Vec<f64>>,
    best: f64,
    prune: bool,
}

impl<'a> Enumerator<'a> {
    fn new(instance: &'a ArrivalInstance, resources: &'a [ResourceSetup], prune: bool) -> Self {
        let n = instance.customers.len();
        let mut suffix_value = vec![0.0; n + 1];
        for i in (0..n).rev() {
            let best_v = instance.customers[i]
                .valuations
                .iter()
                .map(|(_, v)| *v)
                .fold(0.0f64, f64::max);
            suffix_value[i] = suffix_value[i + 1] + best_v;
        }
        Enumerator {
            instance,
            resources,
            suffix_value,
            utilization: vec![vec![0.0; instance.horizon]; resources.len()],
            best: f64::NEG_INFINITY,
            prune,
        }
    }

    fn solve(&mut self) -> f64 {
        self.descend(0, 0.0);
        self.best
    }

    fn descend(&mut self, i: usize, welfare: f64) {
        if i == self.instance.customers.len() {
            if welfare > self.best {
                self.best = welfare;
            }
            return;
        }
        if self.prune && welfare + self.suffix_value[i] <= self.best {
            return;
        }
        let customer = &self.instance.customers[i];
        let slots = customer.slots(self.instance.horizon);
        // null assignment first so a finite best exists early for pruning
        self.descend(i + 1, welfare);
        'bundles: for &(b, value) in &customer.valuations {
            let bundle = &self.instance.catalog[b];
            if bundle.is_null() {
                continue;
            }
            for t in slots.clone() {
                for (k, &r) in bundle.units.iter().enumerate() {
                    if self.utilization[k][t] + r > 1.0 {
                        continue 'bundles;
                    }
                }
            }
            let mut delta_cost = 0.0;
            for t in slots.clone() {
                for (k, &r) in bundle.units.iter().enumerate() {
                    if r == 0.0 {
                        continue;
                    }
                    let y = self.utilization[k][t];
                    let cost = &self.resources[k].cost;
                    delta_cost +=
                        cost.cost(y + r).expect("feasible") - cost.cost(y).expect("feasible");
                    self.utilization[k][t] = y + r;
                }
            }
            self.descend(i + 1, welfare + value - delta_cost);
            for t in slots.clone() {
                for (k, &r) in bundle.units.iter().enumerate() {
                    if r != 0.0 {
                        self.utilization[k][t] -= r;
                    }
                }
            }
        }
    }
}

/// Exact optimal offline welfare by enumeration over bundle assignments,
/// with an admissible value-based prune. Refuses instances beyond the
/// budget; the result is independent of pruning.
pub fn brute_force_opt(
    instance: &ArrivalInstance,
    resources: &[ResourceSetup],
) -> Result<f64, OracleError> {
    let n = instance.customers.len();
    let bundles = instance.catalog.len();
    if !within_enumeration_budget(n, bundles) {
        return Err(OracleError::BudgetExceeded { n, bundles });
    }
    Ok(Enumerator::new(instance, resources, true).solve())
}

#[cfg(test)]
fn brute_force_opt_unpruned(instance: &ArrivalInstance, resources: &[ResourceSetup]) -> f64 {
    Enumerator::new(instance, resources, false).solve()
}

/// Dual-feasible upper bound on offline welfare at the given price table
/// (`prices[k][t]`): each customer collects its best nonnegative surplus at
/// those prices, and each (resource, slot) pair contributes the convex
/// conjugate of its cost at its price. Any nonnegative price table yields a
/// valid bound; the mechanism's terminal prices give a tight-ish one.
pub fn dual_upper_bound(
    instance: &ArrivalInstance,
    resources: &[ResourceSetup],
    prices: &[Vec<f64>],
) -> f64 {
    assert_eq!(prices.len(), resources.len());
    let mut total = 0.0;
    for (k, rs) in resources.iter().enumerate() {
        assert_eq!(prices[k].len(), instance.horizon);
        for &p in &prices[k] {
            total += rs.cost.conjugate(p).expect("price is nonnegative");
        }
    }
    for c in &instance.customers {
        let slots = c.slots(instance.horizon);
        let mut best = 0.0f64;
        for &(b, value) in &c.valuations {
            let bundle = &instance.catalog[b];
            let mut payment = 0.0;
            for (k, &r) in bundle.units.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                let slot_sum: f64 = slots.clone().map(|t| prices[k][t]).sum();
                payment += slot_sum * r;
            }
            best = best.max(value - payment);
        }
        total += best;
    }
    total
}

/// Welfare facts about one (instance, mechanism run) pair. Ratios are
/// undefined (absent) when the online welfare is not strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub w_online: f64,
    pub w_opt_exact: Option<f64>,
    pub w_dual_bound: f64,
    pub er_exact: Option<f64>,
    pub er_bound: Option<f64>,
    /// "exact+dual" when enumeration ran, "dual" otherwise.
    pub method: String,
}

pub fn empirical_ratio(
    w_online: f64,
    w_opt_exact: Option<f64>,
    w_dual_bound: f64,
) -> EvaluationReport {
    let ratio = |w_opt: f64| (w_online > 0.0).then(|| w_opt / w_online);
    EvaluationReport {
        w_online,
        w_opt_exact,
        w_dual_bound,
        er_exact: w_opt_exact.and_then(ratio),
        er_bound: ratio(w_dual_bound),
        method: if w_opt_exact.is_some() {
            "exact+dual".into()
        } else {
            "dual".into()
        },
    }
}
