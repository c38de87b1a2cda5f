//! Sequential posted-price engine.
//!
//! Customers arrive in (arrival, id) order. Each sees, for every resource
//! and every slot of its occupancy window, the price implied by the current
//! utilization there, picks the bundle maximizing valuation minus payment,
//! and is served unless that best utility is negative or some slot lacks
//! capacity. Utilization only ever grows: accepted demand stays for the
//! whole window and is never released.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::pricing::PricingFunction;

/// Per-resource demand of one catalog entry. The all-zero bundle is the
/// "leave without buying" option and is required to be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub units: Vec<f64>,
}

impl Bundle {
    pub fn empty(k: usize) -> Self {
        Bundle {
            units: vec![0.0; k],
        }
    }

    pub fn is_null(&self) -> bool {
        self.units.iter().all(|&r| r == 0.0)
    }
}

/// Demands above this fraction of capacity are flagged by validation: the
/// worst-case guarantees assume each arrival is small against capacity.
pub const SMALL_DEMAND_CAP: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Customer {
    pub id: usize,
    pub arrival: usize,
    /// Occupancy lasts `duration` consecutive slots from `arrival`,
    /// truncated at the horizon.
    pub duration: usize,
    /// Sparse (bundle index, value) pairs; anything absent is valued 0.
    pub valuations: Vec<(usize, f64)>,
}

impl Customer {
    pub fn slots(&self, horizon: usize) -> std::ops::Range<usize> {
        let end = self.arrival.saturating_add(self.duration).min(horizon);
        self.arrival.min(horizon)..end
    }

    pub fn valuation(&self, bundle: usize) -> f64 {
        self.valuations
            .iter()
            .find(|(b, _)| *b == bundle)
            .map(|(_, v)| *v)
            .unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    /// Every non-null bundle had negative utility at the quoted prices.
    NegativeUtility,
    /// The chosen bundle would push some slot past capacity.
    Capacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Accepted {
        bundle: usize,
        payment: f64,
        utility: f64,
    },
    Rejected {
        reason: RejectReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEntry {
    pub customer_id: usize,
    pub arrival: usize,
    pub decision: Decision,
}

/// Full run record: per-customer outcomes plus the welfare decomposition
/// `w_online = accepted_value - total_cost` and the final utilization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeLog {
    pub entries: Vec<OutcomeEntry>,
    pub accepted_value: f64,
    pub revenue: f64,
    pub total_cost: f64,
    pub w_online: f64,
    /// `final_utilization[k][t]` after the last arrival.
    pub final_utilization: Vec<Vec<f64>>,
}

impl OutcomeLog {
    pub fn accepted_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.decision, Decision::Accepted { .. }))
            .count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "customer_id,arrival,decision,bundle,payment,utility")?;
        for e in &self.entries {
            match &e.decision {
                Decision::Accepted {
                    bundle,
                    payment,
                    utility,
                } => writeln!(
                    out,
                    "{},{},accepted,{},{},{}",
                    e.customer_id, e.arrival, bundle, payment, utility
                )?,
                Decision::Rejected { reason } => {
                    let label = match reason {
                        RejectReason::NegativeUtility => "rejected_negative_utility",
                        RejectReason::Capacity => "rejected_capacity",
                    };
                    writeln!(out, "{},{},{label},,,", e.customer_id, e.arrival)?
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineError {
    /// Arrivals must be processed in nondecreasing (arrival, id) order.
    OutOfOrder {
        customer_id: usize,
        arrival: usize,
    },
    /// Bundle dimensionality disagrees with the number of priced resources.
    ResourceMismatch {
        bundle: usize,
        expected: usize,
        got: usize,
    },
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::OutOfOrder {
                customer_id,
                arrival,
            } => write!(
                f,
                "customer {customer_id} (arrival {arrival}) processed out of order"
            ),
            EngineError::ResourceMismatch {
                bundle,
                expected,
                got,
            } => write!(
                f,
                "bundle {bundle} has {got} resource entries, engine prices {expected}"
            ),
        }
    }
}

impl std::error::Error for EngineError {}

/// Mutable run state: current utilization per resource and slot, plus the
/// running welfare terms.
pub struct MechanismState<'a> {
    pricing: &'a [PricingFunction],
    catalog: &'a [Bundle],
    horizon: usize,
    utilization: Vec<Vec<f64>>,
    accepted_value: f64,
    revenue: f64,
    last_key: Option<(usize, usize)>,
}

/// Utility-maximizing bundle at the quoted prices.
///
/// `prices[k][i]` is the unit price of resource `k` in the i-th slot of the
/// customer's window. Returns `(bundle, payment, utility)`; ties break to
/// the lowest bundle index, and the null bundle (zero payment, zero
/// utility) wins only when every non-null bundle has strictly negative
/// utility.
pub fn best_bundle(
    customer: &Customer,
    catalog: &[Bundle],
    prices: &[Vec<f64>],
) -> (usize, f64, f64) {
    let mut best: Option<(usize, f64, f64)> = None;
    let mut null_idx = 0;
    for (b, bundle) in catalog.iter().enumerate() {
        if bundle.is_null() {
            null_idx = b;
            continue;
        }
        let mut payment = 0.0;
        for (k, &r) in bundle.units.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            let slot_sum: f64 = prices[k].iter().sum();
            payment += slot_sum * r;
        }
        let utility = customer.valuation(b) - payment;
        match best {
            Some((_, _, u)) if utility <= u => {}
            _ => best = Some((b, payment, utility)),
        }
    }
    match best {
        Some((b, pay, u)) if u >= 0.0 => (b, pay, u),
        _ => (null_idx, 0.0, 0.0),
    }
}

impl<'a> MechanismState<'a> {
    pub fn new(
        pricing: &'a [PricingFunction],
        catalog: &'a [Bundle],
        horizon: usize,
    ) -> Self {
        assert!(!pricing.is_empty(), "at least one priced resource");
        assert!(horizon > 0, "horizon must be positive");
        let k = pricing.len();
        MechanismState {
            pricing,
            catalog,
            horizon,
            utilization: vec![vec![0.0; horizon]; k],
            accepted_value: 0.0,
            revenue: 0.0,
            last_key: None,
        }
    }

    pub fn utilization(&self) -> &[Vec<f64>] {
        &self.utilization
    }

    /// Prices the customer's window: `quote[k][i]` for the i-th slot.
    pub fn quote(&self, customer: &Customer) -> Vec<Vec<f64>> {
        self.pricing
            .iter()
            .enumerate()
            .map(|(k, pf)| {
                customer
                    .slots(self.horizon)
                    .map(|t| pf.price(self.utilization[k][t]))
                    .collect()
            })
            .collect()
    }

    pub fn process(&mut self, customer: &Customer) -> Result<Decision, EngineError> {
        let key = (customer.arrival, customer.id);
        if let Some(last) = self.last_key {
            if key < last {
                return Err(EngineError::OutOfOrder {
                    customer_id: customer.id,
                    arrival: customer.arrival,
                });
            }
        }
        self.last_key = Some(key);
        for (b, bundle) in self.catalog.iter().enumerate() {
            if bundle.units.len() != self.pricing.len() {
                return Err(EngineError::ResourceMismatch {
                    bundle: b,
                    expected: self.pricing.len(),
                    got: bundle.units.len(),
                });
            }
        }
        let prices = self.quote(customer);
        let (bundle_idx, payment, utility) = best_bundle(customer, self.catalog, &prices);
        let bundle = &self.catalog[bundle_idx];
        if bundle.is_null() {
            return Ok(Decision::Rejected {
                reason: RejectReason::NegativeUtility,
            });
        }
        // Capacity is checked only for the chosen bundle: the customer
        // commits to its utility-maximizing choice and leaves if it does
        // not fit.
        let slots = customer.slots(self.horizon);
        for t in slots.clone() {
            for (k, &r) in bundle.units.iter().enumerate() {
                if self.utilization[k][t] + r > 1.0 {
                    return Ok(Decision::Rejected {
                        reason: RejectReason::Capacity,
                    });
                }
            }
        }
        for t in slots {
            for (k, &r) in bundle.units.iter().enumerate() {
                self.utilization[k][t] += r;
            }
        }
        self.accepted_value += customer.valuation(bundle_idx);
        self.revenue += payment;
        Ok(Decision::Accepted {
            bundle: bundle_idx,
            payment,
            utility,
        })
    }

    /// Total supply cost of the current utilization.
    pub fn total_cost(&self) -> f64 {
        self.pricing
            .iter()
            .enumerate()
            .map(|(k, pf)| {
                self.utilization[k]
                    .iter()
                    .map(|&y| {
                        pf.cost_model()
                            .cost(y)
                            .expect("utilization stays within capacity")
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Run the mechanism over a whole instance. Customers are processed in
/// (arrival, id) order regardless of their order in `customers`.
pub fn run(
    customers: &[Customer],
    catalog: &[Bundle],
    horizon: usize,
    pricing: &[PricingFunction],
) -> OutcomeLog {
    let mut order: Vec<usize> = (0..customers.len()).collect();
    order.sort_by_key(|&i| (customers[i].arrival, customers[i].id));
    let mut state = MechanismState::new(pricing, catalog, horizon);
    let mut entries = Vec::with_capacity(customers.len());
    for &i in &order {
        let c = &customers[i];
        let decision = state
            .process(c)
            .expect("sorted processing order cannot violate the engine contract");
        entries.push(OutcomeEntry {
            customer_id: c.id,
            arrival: c.arrival,
            decision,
        });
    }
    let total_cost = state.total_cost();
    OutcomeLog {
        entries,
        accepted_value: state.accepted_value,
        revenue: state.revenue,
        total_cost,
        w_online: state.accepted_value - total_cost,
        final_utilization: state.utilization,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostModel;
    use crate::pricing::{benchmark_pricing, BenchmarkKind, ResourceSetup};

    fn quadratic_pricing() -> Vec<PricingFunction> {
        let rs = ResourceSetup::new(CostModel::new(1.0, 2.0), 2.0);
        vec![benchmark_pricing(BenchmarkKind::Marginal, &rs)]
    }

    fn catalog_one_resource() -> Vec<Bundle> {
        vec![
            Bundle::empty(1),
            Bundle { units: vec![0.4] },
            Bundle { units: vec![0.8] },
        ]
    }

    #[test]
    fn accepts_zero_utility_and_charges_quoted_payment() {
        let pricing = quadratic_pricing();
        let catalog = catalog_one_resource();
        // marginal pricing at empty utilization quotes 0: utility = value
        let c = Customer {
            id: 0,
            arrival: 0,
            duration: 1,
            valuations: vec![(1, 0.0)],
        };
        let log = run(&[c], &catalog, 4, &pricing);
        assert!(matches!(
            log.entries[0].decision,
            Decision::Accepted { bundle: 1, .. }
        ));
        assert_eq!(log.revenue, 0.0);
    }

    #[test]
    fn rejects_when_all_utilities_negative() {
        let pricing = quadratic_pricing();
        let catalog = catalog_one_resource();
        let first = Customer {
            id: 0,
            arrival: 0,
            duration: 2,
            valuations: vec![(2, 5.0)],
        };
        // second sees price f'(0.8) = 1.6 per unit-slot; value too small
        let second = Customer {
            id: 1,
            arrival: 0,
            duration: 1,
            valuations: vec![(1, 0.1)],
        };
        let log = run(&[first, second], &catalog, 4, &pricing);
        assert!(matches!(
            log.entries[1].decision,
            Decision::Rejected {
                reason: RejectReason::NegativeUtility
            }
        ));
    }

    #[test]
    fn capacity_rejection_after_choice() {
        let pricing = quadratic_pricing();
        let catalog = catalog_one_resource();
        let fill = |id| Customer {
            id,
            arrival: 0,
            duration: 1,
            valuations: vec![(2, 10.0)],
        };
        // two 0.8-bundles cannot both fit in one slot
        let log = run(&[fill(0), fill(1)], &catalog, 1, &pricing);
        assert!(matches!(
            log.entries[0].decision,
            Decision::Accepted { bundle: 2, .. }
        ));
        assert!(matches!(
            log.entries[1].decision,
            Decision::Rejected {
                reason: RejectReason::Capacity
            }
        ));
        // the second customer preferred the big bundle even though the
        // small one would have fit
        assert!(log.final_utilization[0][0] <= 1.0);
    }

    #[test]
    fn ties_break_to_lowest_bundle_index() {
        let pricing = quadratic_pricing();
        // two identical bundles, identical values: index 1 must win
        let catalog = vec![
            Bundle::empty(1),
            Bundle { units: vec![0.4] },
            Bundle { units: vec![0.4] },
        ];
        let c = Customer {
            id: 0,
            arrival: 0,
            duration: 1,
            valuations: vec![(1, 1.0), (2, 1.0)],
        };
        let log = run(&[c], &catalog, 2, &pricing);
        assert!(matches!(
            log.entries[0].decision,
            Decision::Accepted { bundle: 1, .. }
        ));
    }

    #[test]
    fn out_of_order_processing_is_an_error() {
        let pricing = quadratic_pricing();
        let catalog = catalog_one_resource();
        let mut state = MechanismState::new(&pricing, &catalog, 4);
        let late = Customer {
            id: 1,
            arrival: 3,
            duration: 1,
            valuations: vec![(1, 1.0)],
        };
        let early = Customer {
            id: 0,
            arrival: 1,
            duration: 1,
            valuations: vec![(1, 1.0)],
        };
        state.process(&late).unwrap();
        assert!(matches!(
            state.process(&early),
            Err(EngineError::OutOfOrder { .. })
        ));
    }

    #[test]
    fn welfare_identity_holds() {
        let pricing = quadratic_pricing();
        let catalog = catalog_one_resource();
        let customers: Vec<Customer> = (0..20)
            .map(|i| Customer {
                id: i,
                arrival: i % 5,
                duration: 1 + i % 3,
                valuations: vec![(1 + i % 2, 0.3 + 0.1 * i as f64)],
            })
            .collect();
        let log = run(&customers, &catalog, 8, &pricing);
        let value: f64 = log
            .entries
            .iter()
            .filter_map(|e| match e.decision {
                Decision::Accepted { bundle, .. } => {
                    Some(customers[e.customer_id].valuation(bundle))
                }
                _ => None,
            })
            .sum();
        assert!((log.accepted_value - value).abs() <= 1e-12);
        assert!((log.w_online - (log.accepted_value - log.total_cost)).abs() <= 1e-12);
    }
}
