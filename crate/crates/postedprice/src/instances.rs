//! Arrival instances: the data model, synthetic generators with seeded
//! randomness, CSV trace I/O, and validation against the assumptions the
//! worst-case guarantees rest on.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as NormalDist};

use crate::cost::CostModel;
use crate::mechanism::{Bundle, Customer, SMALL_DEMAND_CAP};
use crate::pricing::ResourceSetup;

/// Static environment: the priced resources (cost and true valuation
/// ceiling each), the bundle catalog, and the number of time slots.
#[derive(Debug, Clone)]
pub struct Setup {
    pub resources: Vec<ResourceSetup>,
    pub catalog: Vec<Bundle>,
    pub horizon: usize,
}

impl Setup {
    pub fn k(&self) -> usize {
        self.resources.len()
    }
}

/// One generated or loaded arrival sequence over a fixed catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalInstance {
    pub customers: Vec<Customer>,
    pub catalog: Vec<Bundle>,
    pub horizon: usize,
}

/// Valuation-profile cases: uniform or increasing-mean per-unit values,
/// exactly known or merely estimated ceilings. The generator draws the same
/// values either way; the estimated cases matter to the experiment harness,
/// which synthesizes prices from a perturbed ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseKind {
    /// Uniform values, exact ceiling.
    UE,
    /// Escalating values (low first half, high second half), exact ceiling.
    EE,
    /// Uniform values, inexact ceiling estimate.
    UI,
    /// Escalating values, inexact ceiling estimate.
    EI,
}

impl CaseKind {
    pub fn escalating(&self) -> bool {
        matches!(self, CaseKind::EE | CaseKind::EI)
    }

    pub fn estimated_ceiling(&self) -> bool {
        matches!(self, CaseKind::UI | CaseKind::EI)
    }
}

impl fmt::Display for CaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CaseKind::UE => "ue",
            CaseKind::EE => "ee",
            CaseKind::UI => "ui",
            CaseKind::EI => "ei",
        };
        write!(f, "{s}")
    }
}

impl FromStr for CaseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ue" => Ok(CaseKind::UE),
            "ee" => Ok(CaseKind::EE),
            "ui" => Ok(CaseKind::UI),
            "ei" => Ok(CaseKind::EI),
            other => Err(format!("unknown case kind '{other}' (ue, ee, ui, ei)")),
        }
    }
}

/// Distribution of the per-unit, per-slot value drawn for each arrival,
/// always truncated to the admissible window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PuvDistribution {
    Uniform,
    TruncatedNormal { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub case: CaseKind,
    pub n_customers: usize,
    /// Mean of the geometric duration draw, before horizon truncation.
    pub duration_mean: f64,
    pub puv: PuvDistribution,
    pub seed: u64,
}

/// Mean of a normal truncated to `[lo, hi]`; closed form via the standard
/// normal pdf and cdf. Used to cross-check the rejection sampler.
pub fn truncated_normal_mean(mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    assert!(sigma > 0.0 && lo < hi);
    let std = NormalDist::new(0.0, 1.0).expect("standard normal");
    let a = (lo - mu) / sigma;
    let b = (hi - mu) / sigma;
    let z = std.cdf(b) - std.cdf(a);
    mu + sigma * (std.pdf(a) - std.pdf(b)) / z
}

fn sample_puv<R: Rng>(rng: &mut R, puv: &PuvDistribution, lo: f64, hi: f64) -> f64 {
    match puv {
        PuvDistribution::Uniform => rng.gen_range(lo..hi),
        PuvDistribution::TruncatedNormal { mu, sigma } => {
            let normal = Normal::new(*mu, *sigma).expect("valid normal parameters");
            for _ in 0..100_000 {
                let x = normal.sample(rng);
                if x >= lo && x < hi {
                    return x;
                }
            }
            panic!("truncated normal window [{lo}, {hi}) is practically unreachable");
        }
    }
}

/// Draw a seeded instance.
///
/// Arrivals are uniform over the horizon (sorted, ids in arrival order),
/// durations `1 + Geometric` with the configured mean truncated at the
/// horizon, bundles uniform over the non-null catalog entries. Each arrival
/// values exactly one bundle at `puv * |window| * r_0`, where `r_0` is the
/// bundle's demand for resource 0 and the per-unit value is drawn below the
/// true ceiling of resource 0. In the escalating cases the first half of
/// arrivals draws from the lower half-window and the rest from the upper.
pub fn generate(cfg: &GeneratorConfig, setup: &Setup) -> ArrivalInstance {
    assert!(cfg.n_customers > 0 && setup.horizon > 0);
    assert!(cfg.duration_mean >= 1.0, "mean duration below one slot");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p_bar = setup.resources[0].p_bar;
    let non_null: Vec<usize> = setup
        .catalog
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.is_null())
        .map(|(i, _)| i)
        .collect();
    assert!(!non_null.is_empty(), "catalog has no purchasable bundle");

    let mut arrivals: Vec<usize> = (0..cfg.n_customers)
        .map(|_| rng.gen_range(0..setup.horizon))
        .collect();
    arrivals.sort_unstable();

    let geom = Geometric::new(1.0 / cfg.duration_mean).expect("valid geometric parameter");
    let mut customers = Vec::with_capacity(cfg.n_customers);
    for (id, &arrival) in arrivals.iter().enumerate() {
        let raw = 1 + geom.sample(&mut rng) as usize;
        let duration = raw.min(setup.horizon - arrival);
        let bundle = non_null[rng.gen_range(0..non_null.len())];
        let (lo, hi) = if cfg.case.escalating() {
            if id < cfg.n_customers / 2 {
                (0.0, 0.5 * p_bar)
            } else {
                (0.5 * p_bar, p_bar)
            }
        } else {
            (0.0, p_bar)
        };
        let puv = sample_puv(&mut rng, &cfg.puv, lo, hi).clamp(0.0, p_bar);
        let r0 = setup.catalog[bundle].units[0];
        let value = puv * duration as f64 * r0;
        customers.push(Customer {
            id,
            arrival,
            duration,
            valuations: vec![(bundle, value)],
        });
    }
    ArrivalInstance {
        customers,
        catalog: setup.catalog.clone(),
        horizon: setup.horizon,
    }
}

#[derive(Debug)]
pub enum TraceError {
    Io(std::io::Error),
    Format { line: u64, msg: String },
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceError::Io(e) => write!(f, "trace i/o: {e}"),
            TraceError::Format { line, msg } => write!(f, "trace line {line}: {msg}"),
        }
    }
}

impl std::error::Error for TraceError {}

impl From<std::io::Error> for TraceError {
    fn from(e: std::io::Error) -> Self {
        TraceError::Io(e)
    }
}

fn format_err(line: u64, msg: impl Into<String>) -> TraceError {
    TraceError::Format {
        line,
        msg: msg.into(),
    }
}

/// Read an instance from a trace CSV (`customer_id,arrival_slot,
/// duration_slots,bundle_index,valuation`) and a catalog CSV
/// (`bundle_index,r_1,...,r_K`). Repeated customer ids merge their rows
/// into one multi-bundle valuation map. Returns the instance and any
/// warnings (unsorted input that was re-sorted, a missing null bundle that
/// was appended). When `horizon` is absent it is inferred from the last
/// occupied slot.
pub fn load_trace(
    trace_path: &Path,
    catalog_path: &Path,
    horizon: Option<usize>,
) -> Result<(ArrivalInstance, Vec<String>), TraceError> {
    let mut warnings = Vec::new();

    let mut catalog_rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(catalog_path)?));
    for rec in rdr.records() {
        let rec = rec.map_err(|e| format_err(0, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() < 2 {
            return Err(format_err(line, "catalog row needs an index and demands"));
        }
        let idx: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| format_err(line, "bad bundle_index"))?;
        let units = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|_| format_err(line, "bad demand value"))?;
        if units.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(format_err(line, "demands must be finite and nonnegative"));
        }
        catalog_rows.push((idx, units));
    }
    catalog_rows.sort_by_key(|(i, _)| *i);
    let mut catalog = Vec::with_capacity(catalog_rows.len());
    for (pos, (idx, units)) in catalog_rows.into_iter().enumerate() {
        if idx != pos {
            return Err(format_err(0, format!("bundle indices must be 0..n, missing {pos}")));
        }
        catalog.push(Bundle { units });
    }
    if catalog.is_empty() {
        return Err(format_err(0, "catalog is empty"));
    }
    let k = catalog[0].units.len();
    if catalog.iter().any(|b| b.units.len() != k) {
        return Err(format_err(0, "catalog rows disagree on resource count"));
    }
    if !catalog.iter().any(|b| b.is_null()) {
        warnings.push("catalog lacked a null bundle; appended one".into());
        catalog.push(Bundle::empty(k));
    }

    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(trace_path)?));
    let mut customers: Vec<Customer> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| format_err(0, e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 5 {
            return Err(format_err(line, "expected 5 columns"));
        }
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| format_err(line, "bad customer_id"))?;
        let arrival: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| format_err(line, "bad arrival_slot"))?;
        let duration: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| format_err(line, "bad duration_slots"))?;
        let bundle: usize = rec[3]
            .trim()
            .parse()
            .map_err(|_| format_err(line, "bad bundle_index"))?;
        let value: f64 = rec[4]
            .trim()
            .parse()
            .map_err(|_| format_err(line, "bad valuation"))?;
        if duration == 0 {
            return Err(format_err(line, "duration must be at least one slot"));
        }
        if bundle >= catalog.len() {
            return Err(format_err(line, format!("bundle {bundle} not in catalog")));
        }
        if !value.is_finite() || value < 0.0 {
            return Err(format_err(line, "valuation must be finite and nonnegative"));
        }
        if let Some(existing) = customers.iter_mut().find(|c| c.id == id) {
            if existing.arrival != arrival || existing.duration != duration {
                return Err(format_err(
                    line,
                    format!("customer {id} repeated with a different window"),
                ));
            }
            existing.valuations.push((bundle, value));
        } else {
            customers.push(Customer {
                id,
                arrival,
                duration,
                valuations: vec![(bundle, value)],
            });
        }
    }
    let sorted = customers
        .windows(2)
        .all(|w| (w[0].arrival, w[0].id) <= (w[1].arrival, w[1].id));
    if !sorted {
        warnings.push("trace rows were not in (arrival, id) order; re-sorted".into());
        customers.sort_by_key(|c| (c.arrival, c.id));
    }
    let needed = customers
        .iter()
        .map(|c| c.arrival + c.duration)
        .max()
        .unwrap_or(1);
    let horizon = horizon.unwrap_or(needed);
    Ok((
        ArrivalInstance {
            customers,
            catalog,
            horizon,
        },
        warnings,
    ))
}

/// Write the two CSVs consumed by [`load_trace`].
pub fn save_trace(
    instance: &ArrivalInstance,
    trace_path: &Path,
    catalog_path: &Path,
) -> std::io::Result<()> {
    let mut cat = BufWriter::new(File::create(catalog_path)?);
    let k = instance.catalog.first().map(|b| b.units.len()).unwrap_or(0);
    let header: Vec<String> = std::iter::once("bundle_index".to_string())
        .chain((1..=k).map(|i| format!("r_{i}")))
        .collect();
    writeln!(cat, "{}", header.join(","))?;
    for (i, b) in instance.catalog.iter().enumerate() {
        let row: Vec<String> = std::iter::once(i.to_string())
            .chain(b.units.iter().map(|r| r.to_string()))
            .collect();
        writeln!(cat, "{}", row.join(","))?;
    }
    cat.flush()?;

    let mut tr = BufWriter::new(File::create(trace_path)?);
    writeln!(tr, "customer_id,arrival_slot,duration_slots,bundle_index,valuation")?;
    for c in &instance.customers {
        for (b, v) in &c.valuations {
            writeln!(tr, "{},{},{},{},{}", c.id, c.arrival, c.duration, b, v)?;
        }
    }
    tr.flush()
}

/// Assumption check against a setup. Violations break the worst-case
/// guarantees (per-unit values above the resource ceiling, windows outside
/// the horizon, a missing null bundle); oversized demands are only warned
/// about since they degrade rather than void the bounds.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate(instance: &ArrivalInstance, setup: &Setup) -> ValidationReport {
    let mut report = ValidationReport::default();
    if instance.catalog.len() != setup.catalog.len() {
        report
            .violations
            .push("instance and setup catalogs differ in size".into());
    }
    if !instance.catalog.iter().any(|b| b.is_null()) {
        report.violations.push("catalog has no null bundle".into());
    }
    for (i, b) in instance.catalog.iter().enumerate() {
        if b.units.len() != setup.k() {
            report
                .violations
                .push(format!("bundle {i} has wrong resource count"));
            continue;
        }
        for (k, &r) in b.units.iter().enumerate() {
            if r > 1.0 {
                report
                    .violations
                    .push(format!("bundle {i} demands more than capacity of resource {k}"));
            } else if r > SMALL_DEMAND_CAP {
                report.warnings.push(format!(
                    "bundle {i} demand {r} for resource {k} exceeds the small-demand cap {SMALL_DEMAND_CAP}"
                ));
            }
        }
    }
    for c in &instance.customers {
        if c.arrival >= instance.horizon {
            report
                .violations
                .push(format!("customer {} arrives outside the horizon", c.id));
            continue;
        }
        let window = c.slots(instance.horizon).len();
        if window < c.duration {
            report.warnings.push(format!(
                "customer {} window truncated at the horizon",
                c.id
            ));
        }
        for (b, v) in &c.valuations {
            if *b >= instance.catalog.len() {
                report
                    .violations
                    .push(format!("customer {} values unknown bundle {b}", c.id));
                continue;
            }
            for (k, &r) in instance.catalog[*b].units.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                let puv = v / (window as f64 * r);
                let cap = setup.resources[k].p_bar;
                if puv > cap * (1.0 + 1e-9) {
                    report.violations.push(format!(
                        "customer {} implies per-unit value {puv} above ceiling {cap} of resource {k}",
                        c.id
                    ));
                }
            }
        }
    }
    let sorted = instance
        .customers
        .windows(2)
        .all(|w| (w[0].arrival, w[0].id) <= (w[1].arrival, w[1].id));
    if !sorted {
        report
            .warnings
            .push("customers not in (arrival, id) order; the engine will sort".into());
    }
    report
}

/// Two-resource catalog for the cluster preset: every pair from
/// r ∈ {0.001, 0.003, 0.005} on each of (cpu, ram), nine bundles plus the
/// null bundle at index 0.
pub fn cluster_catalog() -> Vec<Bundle> {
    let steps = [0.001, 0.003, 0.005];
    let mut catalog = vec![Bundle::empty(2)];
    for &cpu in &steps {
        for &ram in &steps {
            catalog.push(Bundle {
                units: vec![cpu, ram],
            });
        }
    }
    catalog
}

fn cluster_resources(p_bar_mult: f64) -> Vec<ResourceSetup> {
    assert!(p_bar_mult > 0.0);
    let cpu_cost = CostModel::new(0.223, 3.0);
    let ram_cost = CostModel::new(8.38e-6, 1.2);
    let p_cpu = p_bar_mult * cpu_cost.marginal_cap();
    // The generator prices a bundle off its cpu demand; skewed bundles
    // (max cpu, min ram) imply a ram per-unit value up to 5x the cpu one,
    // so the ram ceiling carries that headroom to keep instances admissible.
    let p_ram = 5.0 * p_cpu;
    vec![
        ResourceSetup::new(cpu_cost, p_cpu),
        ResourceSetup::new(ram_cost, p_ram),
    ]
}

/// Single-resource catalog for the desk preset: request sizes
/// {0.0006, 0.003, 0.015} plus the null bundle. The 25x spread matters: a
/// few concurrent large requests swing per-slot demand well above and below
/// capacity, so admission policy is tested under bursts and lulls in the
/// same run.
pub fn desk_catalog() -> Vec<Bundle> {
    let mut catalog = vec![Bundle::empty(1)];
    for &r in &[0.0006, 0.003, 0.015] {
        catalog.push(Bundle { units: vec![r] });
    }
    catalog
}

/// Named presets. `google-cluster-like` mirrors a busy shared cluster:
/// two resources, nine bundle shapes, 4000 arrivals over 3600 slots with
/// long service times. `desk` keeps the expensive resource and shrinks to
/// 500 arrivals over 600 slots for fast repeated experiments.
pub fn preset(name: &str, p_bar_mult: f64) -> Option<(Setup, GeneratorConfig)> {
    let resources = cluster_resources(p_bar_mult);
    let puv = PuvDistribution::Uniform;
    match name {
        "google-cluster-like" => Some((
            Setup {
                resources,
                catalog: cluster_catalog(),
                horizon: 3600,
            },
            GeneratorConfig {
                case: CaseKind::UE,
                n_customers: 4000,
                duration_mean: 300.0,
                puv,
                seed: 0,
            },
        )),
        "desk" => Some((
            Setup {
                resources: vec![resources[0]],
                catalog: desk_catalog(),
                horizon: 600,
            },
            GeneratorConfig {
                case: CaseKind::UE,
                n_customers: 500,
                duration_mean: 225.0,
                puv,
                seed: 0,
            },
        )),
        _ => None,
    }
}
