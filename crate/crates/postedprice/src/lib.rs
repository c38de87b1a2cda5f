//! Posted-price mechanisms for online combinatorial resource allocation with
//! convex supply costs and unit capacity limits.
//!
//! The crate synthesizes pricing functions that map current resource
//! utilization to a posted unit price and are worst-case optimal for power
//! supply costs `f(y) = a*y^s`, runs the resulting online mechanism over
//! arrival instances, and evaluates empirical competitive ratios against an
//! exact enumeration oracle (at desk scale) and a dual upper bound (at any
//! scale).
//!
//! Modules:
//! - [`cost`]: the power cost family and its marginal, inverse marginal, and
//!   convex conjugate.
//! - [`numerics`]: incomplete gamma, the characteristic polynomial, adaptive
//!   quadrature, and bracketed bisection.
//! - [`pricing`]: regime classification, threshold constants, and synthesis
//!   of the optimal and benchmark pricing functions.
//! - [`mechanism`]: the sequential posted-price engine.
//! - [`instances`]: instance data model, synthetic generators, trace I/O.
//! - [`oracle`]: exact offline welfare, dual upper bounds, empirical ratios.
//! - [`harness`]: sweep experiments and CSV emission for the CLI.

pub mod cost;
pub mod harness;
pub mod instances;
pub mod mechanism;
pub mod numerics;
pub mod oracle;
pub mod pricing;

pub use cost::CostModel;
pub use instances::{ArrivalInstance, CaseKind, GeneratorConfig, Setup};
pub use mechanism::{run, Bundle, Customer, OutcomeLog};
pub use oracle::EvaluationReport;
pub use pricing::{PricingFunction, Regime, RegimeTag, ResourceSetup};
