//! Python bindings: cost models, pricing curves, and a one-call preset
//! evaluator. Panicking library preconditions are re-checked here so Python
//! callers get ValueError instead of a panic.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use postedprice::instances::{generate, preset, CaseKind};
use postedprice::mechanism::run as run_mechanism;
use postedprice::oracle::{dual_upper_bound, empirical_ratio};
use postedprice::pricing::{
    benchmark_pricing, capacity_price as lib_capacity_price, classify, deployment_pricing,
    optimal_ratio, regime_constants, synthesize_optimal, BenchmarkKind, PricingFunction,
    ResourceSetup, DEFAULT_TABLE_NODES,
};
use postedprice::CostModel;

fn checked_cost(a: f64, s: f64) -> PyResult<CostModel> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(PyValueError::new_err(format!(
            "cost scale a = {a} must be positive"
        )));
    }
    if !(s > 1.0 && s.is_finite()) {
        return Err(PyValueError::new_err(format!(
            "cost exponent s = {s} must exceed 1"
        )));
    }
    Ok(CostModel::new(a, s))
}

fn checked_resource(a: f64, s: f64, p_bar: f64) -> PyResult<ResourceSetup> {
    let cost = checked_cost(a, s)?;
    if !(p_bar > 0.0 && p_bar.is_finite()) {
        return Err(PyValueError::new_err(format!(
            "valuation ceiling p_bar = {p_bar} must be positive"
        )));
    }
    Ok(ResourceSetup::new(cost, p_bar))
}

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Power supply cost `f(y) = a * y**s` on utilization `y in [0, 1]`.
#[pyclass(name = "CostModel", frozen)]
struct PyCostModel {
    inner: CostModel,
}

#[pymethods]
impl PyCostModel {
    #[new]
    fn new(a: f64, s: f64) -> PyResult<Self> {
        Ok(Self {
            inner: checked_cost(a, s)?,
        })
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.scale()
    }

    #[getter]
    fn s(&self) -> f64 {
        self.inner.exponent()
    }

    /// `f'(1) = a * s`, the top marginal cost.
    #[getter]
    fn marginal_cap(&self) -> f64 {
        self.inner.marginal_cap()
    }

    fn cost(&self, y: f64) -> PyResult<f64> {
        self.inner.cost(y).map_err(value_err)
    }

    fn marginal(&self, y: f64) -> PyResult<f64> {
        self.inner.marginal(y).map_err(value_err)
    }

    /// Convex conjugate restricted to `[0, 1]`: `max_y (p*y - f(y))`.
    fn conjugate(&self, p: f64) -> PyResult<f64> {
        self.inner.conjugate(p).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "CostModel(a={}, s={})",
            self.inner.scale(),
            self.inner.exponent()
        )
    }
}

/// A posted-price curve: utilization in, unit price out.
#[pyclass(name = "Pricing", frozen)]
struct PyPricing {
    inner: PricingFunction,
}

impl PyPricing {
    fn wrap(inner: PricingFunction) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyPricing {
    /// Worst-case-optimal curve for the given resource. `choice in [0, 1]`
    /// picks the family member where a family exists, 0 being the most
    /// conservative one.
    #[staticmethod]
    #[pyo3(signature = (a, s, p_bar, choice = 0.0))]
    fn synthesize(a: f64, s: f64, p_bar: f64, choice: f64) -> PyResult<Self> {
        let rs = checked_resource(a, s, p_bar)?;
        synthesize_optimal(&rs, choice)
            .map(Self::wrap)
            .map_err(value_err)
    }

    /// Curve actually deployed for a ceiling estimate: one shared curve for
    /// every estimate at or below the capacity price, the steep-regime
    /// synthesis above it.
    #[staticmethod]
    fn deployment(a: f64, s: f64, p_bar: f64) -> PyResult<Self> {
        let rs = checked_resource(a, s, p_bar)?;
        deployment_pricing(&rs).map(Self::wrap).map_err(value_err)
    }

    /// Benchmark curve: `"tp"` quotes the marginal at doubled utilization
    /// with an exponential ramp to the ceiling, `"mp"` quotes the marginal.
    #[staticmethod]
    fn benchmark(kind: &str, a: f64, s: f64, p_bar: f64) -> PyResult<Self> {
        let rs = checked_resource(a, s, p_bar)?;
        let kind = match kind.trim().to_ascii_lowercase().as_str() {
            "tp" | "ppm-tp" => BenchmarkKind::TwiceMarginal,
            "mp" | "ppm-mp" => BenchmarkKind::Marginal,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown benchmark '{other}' (want tp or mp)"
                )))
            }
        };
        Ok(Self::wrap(benchmark_pricing(kind, &rs)))
    }

    fn price(&self, y: f64) -> PyResult<f64> {
        if !y.is_finite() {
            return Err(PyValueError::new_err(format!(
                "utilization {y} must be finite"
            )));
        }
        Ok(self.inner.price(y))
    }

    /// `n + 1` evenly spaced `(y, price)` samples over `[0, 1]`.
    fn curve(&self, n: usize) -> PyResult<Vec<(f64, f64)>> {
        if n == 0 {
            return Err(PyValueError::new_err("need at least one interval"));
        }
        Ok((0..=n)
            .map(|i| {
                let y = i as f64 / n as f64;
                (y, self.inner.price(y))
            })
            .collect())
    }

    /// Copy with dense lookup tables replacing on-the-fly root solving.
    fn tabulated(&self, nodes: usize) -> PyResult<Self> {
        if nodes < 16 {
            return Err(PyValueError::new_err("tabulation needs at least 16 nodes"));
        }
        Ok(Self::wrap(self.inner.clone().tabulated(nodes)))
    }

    #[getter]
    fn regime(&self) -> String {
        self.inner.regime.tag.to_string()
    }

    /// Guaranteed worst-case ratio; None for benchmark curves.
    #[getter]
    fn alpha(&self) -> Option<f64> {
        self.inner.alpha
    }

    #[getter]
    fn p_bar(&self) -> f64 {
        self.inner.p_bar()
    }

    #[getter]
    fn domain_end(&self) -> f64 {
        self.inner.domain_end
    }

    #[getter]
    fn extension_price(&self) -> f64 {
        self.inner.extension_price()
    }

    fn __repr__(&self) -> String {
        format!(
            "Pricing(regime='{}', p_bar={}, domain_end={})",
            self.inner.regime.tag,
            self.inner.p_bar(),
            self.inner.domain_end
        )
    }
}

/// `s**(s/(s-1))`: the floor on any achievable worst-case ratio.
#[pyfunction]
fn alpha_min(s: f64) -> PyResult<f64> {
    checked_cost(1.0, s)?;
    Ok(regime_constants(s).alpha_min)
}

/// `(1/s)**(1/(s-1))`: where `s * f'(y)` meets the top marginal cost.
#[pyfunction]
fn dividing_threshold(s: f64) -> PyResult<f64> {
    checked_cost(1.0, s)?;
    Ok(regime_constants(s).u_s)
}

/// Ceiling level separating the moderate and steep high-ceiling regimes.
#[pyfunction]
fn capacity_price(a: f64, s: f64) -> PyResult<f64> {
    let cost = checked_cost(a, s)?;
    Ok(lib_capacity_price(&ResourceSetup::new(
        cost,
        cost.marginal_cap(),
    )))
}

/// Worst-case ratio of the optimal curve for this resource, plus its regime.
#[pyfunction]
fn guaranteed_ratio(a: f64, s: f64, p_bar: f64) -> PyResult<(f64, String)> {
    let rs = checked_resource(a, s, p_bar)?;
    let alpha = optimal_ratio(&rs).map_err(value_err)?;
    Ok((alpha, classify(&rs).tag.to_string()))
}

/// Generate one seeded preset instance, run one mechanism on it, and score
/// it against the dual upper bound. Returns a dict with the welfare split.
#[pyfunction]
#[pyo3(signature = (preset_name, p_bar_mult, mechanism, case = "ue", seed = 0, n_customers = None, duration_mean = None))]
#[allow(clippy::too_many_arguments)]
fn evaluate_preset<'py>(
    py: Python<'py>,
    preset_name: &str,
    p_bar_mult: f64,
    mechanism: &str,
    case: &str,
    seed: u64,
    n_customers: Option<usize>,
    duration_mean: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    if !(p_bar_mult > 0.0 && p_bar_mult.is_finite()) {
        return Err(PyValueError::new_err(format!(
            "ceiling multiplier {p_bar_mult} must be positive"
        )));
    }
    let (setup, mut gen_cfg) = preset(preset_name, p_bar_mult)
        .ok_or_else(|| PyValueError::new_err(format!("unknown preset '{preset_name}'")))?;
    gen_cfg.case = case.parse::<CaseKind>().map_err(value_err)?;
    gen_cfg.seed = seed;
    if let Some(n) = n_customers {
        if n == 0 {
            return Err(PyValueError::new_err("need at least one customer"));
        }
        gen_cfg.n_customers = n;
    }
    if let Some(d) = duration_mean {
        if !(d >= 1.0 && d.is_finite()) {
            return Err(PyValueError::new_err(format!(
                "mean duration {d} must be at least one slot"
            )));
        }
        gen_cfg.duration_mean = d;
    }

    let pricing: Vec<PricingFunction> = setup
        .resources
        .iter()
        .map(|rs| match mechanism.trim().to_ascii_lowercase().as_str() {
            "op" | "ppm-op" => deployment_pricing(rs)
                .map(|pf| pf.tabulated(DEFAULT_TABLE_NODES))
                .map_err(value_err),
            "tp" | "ppm-tp" => Ok(benchmark_pricing(BenchmarkKind::TwiceMarginal, rs)),
            "mp" | "ppm-mp" => Ok(benchmark_pricing(BenchmarkKind::Marginal, rs)),
            other => Err(PyValueError::new_err(format!(
                "unknown mechanism '{other}' (want op, tp, or mp)"
            ))),
        })
        .collect::<PyResult<_>>()?;

    let instance = generate(&gen_cfg, &setup);
    let log = run_mechanism(&instance.customers, &instance.catalog, instance.horizon, &pricing);
    let prices: Vec<Vec<f64>> = pricing
        .iter()
        .zip(&log.final_utilization)
        .map(|(pf, per_slot)| per_slot.iter().map(|&y| pf.price(y)).collect())
        .collect();
    let dual = dual_upper_bound(&instance, &setup.resources, &prices);
    let report = empirical_ratio(log.w_online, None, dual);

    let out = PyDict::new(py);
    out.set_item("w_online", log.w_online)?;
    out.set_item("w_opt_bound", dual)?;
    out.set_item("er", report.er_bound)?;
    out.set_item("accepted_value", log.accepted_value)?;
    out.set_item("revenue", log.revenue)?;
    out.set_item("total_cost", log.total_cost)?;
    out.set_item("accepted", log.accepted_count())?;
    out.set_item("n_customers", instance.customers.len())?;
    out.set_item("horizon", instance.horizon)?;
    Ok(out)
}

#[pymodule]
fn postedprice_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCostModel>()?;
    m.add_class::<PyPricing>()?;
    m.add_function(wrap_pyfunction!(alpha_min, m)?)?;
    m.add_function(wrap_pyfunction!(dividing_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(capacity_price, m)?)?;
    m.add_function(wrap_pyfunction!(guaranteed_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_preset, m)?)?;
    Ok(())
}
