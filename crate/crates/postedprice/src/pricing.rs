//! Synthesis of utilization-indexed posted prices for a single capacitated
//! resource with power supply cost.
//!
//! A pricing function maps current utilization `y in [0, 1]` to the unit
//! price quoted to the next arrival. The synthesized curves are worst-case
//! optimal for the online allocation game parameterized by the cost
//! `f(y) = a*y^s` and the valuation ceiling `p_bar` (the highest per-unit,
//! per-slot value any arrival may have). Which construction applies depends
//! on where `p_bar` sits relative to the marginal-cost range:
//!
//! - `p_bar <= f'(1)`: low ceiling. A one-branch curve built from the scaled
//!   root equation, parameterized by the knot `m` where it reaches `p_bar`.
//! - `f'(1) < p_bar <= C`: high ceiling, moderate. Scaled-root branch up to
//!   `u`, then a closed-form exponential tail that reaches `p_bar` at some
//!   `rho <= 1`. `C` is the largest ceiling for which the flattest such tail
//!   still reaches `p_bar` by 1, see [`capacity_price`].
//! - `p_bar > C`: high ceiling, steep. A rescaled marginal below the
//!   threshold knot and the same exponential tail above it; the achievable
//!   ratio now exceeds the unconstrained floor.
//!
//! The worst-case ratio floor is `alpha_min(s) = s^(s/(s-1))`; for the steep
//! regime the achieved ratio is `alpha_of_u` at the dividing knot.

use std::fmt;
use std::io::{self, Write};

use crate::cost::CostModel;
use crate::numerics::{
    self, bisect, integrate, lower_incomplete_gamma, CharPoly, CharRoots,
    NumericsError,
};

#[derive(Debug)]
pub enum SynthesisError {
    BadInput(String),
    /// A defining equation has no root in its admissible range.
    NoRoot { what: &'static str },
    /// Bracket expansion hit its doubling budget without a sign change.
    BracketExpansion { what: &'static str },
    Numerics(NumericsError),
}

impl fmt::Display for SynthesisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthesisError::BadInput(msg) => write!(f, "bad input: {msg}"),
            SynthesisError::NoRoot { what } => write!(f, "no admissible root for {what}"),
            SynthesisError::BracketExpansion { what } => {
                write!(f, "bracket expansion exhausted for {what}")
            }
            SynthesisError::Numerics(e) => write!(f, "numerics failure: {e}"),
        }
    }
}

impl std::error::Error for SynthesisError {}

impl From<NumericsError> for SynthesisError {
    fn from(e: NumericsError) -> Self {
        SynthesisError::Numerics(e)
    }
}

/// One capacitated resource: its supply cost and the valuation ceiling
/// assumed when synthesizing its pricing function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceSetup {
    pub cost: CostModel,
    pub p_bar: f64,
}

impl ResourceSetup {
    pub fn new(cost: CostModel, p_bar: f64) -> Self {
        assert!(
            p_bar > 0.0 && p_bar.is_finite(),
            "valuation ceiling must exceed the marginal-cost floor"
        );
        ResourceSetup { cost, p_bar }
    }

    pub fn c_bar(&self) -> f64 {
        self.cost.marginal_cap()
    }

    pub fn s(&self) -> f64 {
        self.cost.exponent()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeTag {
    /// Ceiling at or below the top marginal cost.
    Luc,
    /// Ceiling above the top marginal cost, at or below the capacity price.
    Huc1,
    /// Ceiling above the capacity price.
    Huc2,
}

impl fmt::Display for RegimeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegimeTag::Luc => write!(f, "low-ceiling"),
            RegimeTag::Huc1 => write!(f, "high-ceiling-moderate"),
            RegimeTag::Huc2 => write!(f, "high-ceiling-steep"),
        }
    }
}

/// Classification outcome. `v` and `w` are only meaningful in the low
/// ceiling regime (`v` is where the marginal reaches `p_bar`, `w = v * u_s`
/// is the most conservative knot); `capacity_price` only in the high ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regime {
    pub tag: RegimeTag,
    pub capacity_price: Option<f64>,
    pub v: Option<f64>,
    pub w: Option<f64>,
}

/// Constants of the cost exponent alone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeConstants {
    /// `s^(s/(s-1))`, the floor on any achievable worst-case ratio.
    pub alpha_min: f64,
    /// `(1/s)^(1/(s-1))`, the utilization where `s * f'(y)` meets `f'(1)`.
    pub u_s: f64,
}

pub fn regime_constants(s: f64) -> RegimeConstants {
    RegimeConstants {
        alpha_min: numerics::alpha_min(s),
        u_s: (1.0 / s).powf(1.0 / (s - 1.0)),
    }
}

/// `alpha_s(u) = (s-1) / (u - u^s)` for `u in (0, 1)`: the ratio forced by
/// pinning the scaled-root branch to end at `u`. Minimized at `u_s`, where it
/// equals `alpha_min`.
pub fn alpha_of_u(s: f64, u: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0, "knot must lie strictly inside (0, 1)");
    (s - 1.0) / (u - u.powf(s))
}

/// First ratio lower bound: the best ratio any curve ending its scaled
/// branch at `u` can hope for. Equals `alpha_of_u` left of `u_s` and the
/// unconditional floor from `u_s` on.
pub fn lower_bound_alpha1(s: f64, u: f64) -> f64 {
    let rc = regime_constants(s);
    if u < rc.u_s {
        alpha_of_u(s, u)
    } else {
        rc.alpha_min
    }
}

/// Exponential tail started at `phi(u) = f'(1)` with growth rate `alpha`,
/// evaluated at `y >= u`. Solves `phi' = alpha * (phi - f'(y))` in closed
/// form via the incomplete gamma function.
fn phi_ivp_at(c_bar: f64, s: f64, alpha: f64, u: f64, y: f64) -> f64 {
    let g_u = lower_incomplete_gamma(s, u * alpha);
    let g_y = lower_incomplete_gamma(s, y * alpha);
    c_bar * ((y - u) * alpha).exp() - c_bar * (y * alpha).exp() * (g_y - g_u) / alpha.powf(s - 1.0)
}

/// Tail evaluator with the rate tied to the knot: `alpha = alpha_min` for
/// `u >= u_s` and `alpha_of_u` below, matching how the synthesized curves
/// continue past their scaled branch.
pub fn phi_ivp(rs: &ResourceSetup, u: f64, y: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0, "tail knot must lie inside (0, 1)");
    assert!(
        y >= u - 1e-12 && y <= 1.0 + 1e-12,
        "tail evaluated outside [u, 1]"
    );
    let alpha = lower_bound_alpha1(rs.s(), u);
    phi_ivp_at(rs.c_bar(), rs.s(), alpha, u, y.max(u))
}

/// Sign of `p_bar - phi_tail(1)` expressed in integrated form; zero exactly
/// when the tail started at `u` with rate `alpha` lands on `p_bar` at full
/// utilization.
fn terminal_gap(rs: &ResourceSetup, alpha: f64, u: f64) -> f64 {
    let s = rs.s();
    let g_hi = lower_incomplete_gamma(s, alpha);
    let g_lo = lower_incomplete_gamma(s, u * alpha);
    let apow = alpha.powf(s - 1.0);
    (g_hi - g_lo) - apow * (-u * alpha).exp() + (rs.p_bar / rs.c_bar()) * apow * (-alpha).exp()
}

/// Second ratio lower bound: the smallest rate at which a tail started at
/// `phi(u) = f'(1)` still reaches `p_bar` by full utilization. Found by
/// doubling the bracket (at most 64 times) and bisecting. Rates below 1 are
/// reported as 1 since no meaningful ratio is smaller.
pub fn lower_bound_alpha2(rs: &ResourceSetup, u: f64) -> Result<f64, SynthesisError> {
    assert!(u > 0.0 && u < 1.0);
    if terminal_gap(rs, 1.0, u) <= 0.0 {
        return Ok(1.0);
    }
    let mut lo = 1.0;
    let mut hi = 2.0;
    let mut expanded = false;
    for _ in 0..64 {
        if terminal_gap(rs, hi, u) <= 0.0 {
            expanded = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !expanded {
        return Err(SynthesisError::BracketExpansion {
            what: "tail rate reaching the ceiling",
        });
    }
    Ok(bisect(|a| terminal_gap(rs, a, u), lo, hi, 1e-12)?)
}

/// The capacity price `C`: the value the flattest admissible tail (knot
/// `u_s`, rate `alpha_min`) reaches at full utilization. Ceilings above it
/// force a steeper-than-floor ratio.
pub fn capacity_price(rs: &ResourceSetup) -> f64 {
    let s = rs.s();
    let rc = regime_constants(s);
    phi_ivp_at(rs.c_bar(), s, rc.alpha_min, rc.u_s, 1.0)
}

pub fn classify(rs: &ResourceSetup) -> Regime {
    let c_bar = rs.c_bar();
    if rs.p_bar <= c_bar {
        let v = (rs.p_bar / c_bar).powf(1.0 / (rs.s() - 1.0));
        let w = v * regime_constants(rs.s()).u_s;
        return Regime {
            tag: RegimeTag::Luc,
            capacity_price: None,
            v: Some(v),
            w: Some(w),
        };
    }
    let cp = capacity_price(rs);
    let tag = if rs.p_bar <= cp {
        RegimeTag::Huc1
    } else {
        RegimeTag::Huc2
    };
    Regime {
        tag,
        capacity_price: Some(cp),
        v: None,
        w: None,
    }
}

/// Dividing knot of the synthesized curve in the high-ceiling regimes: the
/// `u` whose tail lands exactly on `p_bar` at full utilization. In the
/// moderate regime the rate is pinned at the floor and `u >= u_s`; in the
/// steep regime the rate is `alpha_of_u` and the knot drops below `u_s`.
pub fn critical_dividing_threshold(rs: &ResourceSetup) -> Result<f64, SynthesisError> {
    let regime = classify(rs);
    let rc = regime_constants(rs.s());
    match regime.tag {
        RegimeTag::Luc => Err(SynthesisError::BadInput(
            "dividing threshold exists only above the marginal-cost range".into(),
        )),
        RegimeTag::Huc1 => {
            // terminal_gap(alpha_min, u) increases in u: longer scaled branch,
            // shorter tail, lower landing value.
            let at_us = terminal_gap(rs, rc.alpha_min, rc.u_s);
            if at_us >= 0.0 {
                return Ok(rc.u_s);
            }
            Ok(bisect(
                |u| terminal_gap(rs, rc.alpha_min, u),
                rc.u_s,
                1.0 - 1e-12,
                1e-12,
            )?)
        }
        RegimeTag::Huc2 => {
            let gap = |u: f64| terminal_gap(rs, alpha_of_u(rs.s(), u), u);
            let hi = rc.u_s * (1.0 - 1e-12);
            let mut lo = 0.5 * rc.u_s;
            let mut bracketed = false;
            for _ in 0..64 {
                if gap(lo) < 0.0 {
                    bracketed = true;
                    break;
                }
                lo *= 0.5;
            }
            if !bracketed {
                return Err(SynthesisError::BracketExpansion {
                    what: "steep-regime dividing threshold",
                });
            }
            Ok(bisect(gap, lo, hi, 1e-12)?)
        }
    }
}

/// Where the flattest moderate-regime curve (knot `u_s`) reaches the
/// ceiling. Only defined when the ceiling is within reach by 1, i.e. when
/// `p_bar <= capacity_price`.
pub fn rho_s(rs: &ResourceSetup) -> Result<f64, SynthesisError> {
    if rs.p_bar <= rs.c_bar() {
        return Err(SynthesisError::BadInput(
            "ceiling knot exists only above the marginal-cost range".into(),
        ));
    }
    let rc = regime_constants(rs.s());
    solve_tail_hits_ceiling(rs, rc.u_s)
}

/// Smallest `rho in [u, 1]` with `phi_ivp(rs, u, rho) = p_bar`.
fn solve_tail_hits_ceiling(rs: &ResourceSetup, u: f64) -> Result<f64, SynthesisError> {
    let g = |y: f64| phi_ivp(rs, u, y) - rs.p_bar;
    let at_one = g(1.0);
    if at_one < 0.0 {
        if at_one >= -1e-6 * rs.p_bar {
            return Ok(1.0);
        }
        return Err(SynthesisError::NoRoot {
            what: "tail never reaches the ceiling inside [u, 1]",
        });
    }
    Ok(bisect(g, u, 1.0, 1e-12)?)
}

/// Solves the scaled price equation
/// `integral_anchor^chi eta^(s-1) / P(eta) deta = ln(knot / y)`
/// for `chi` and returns the scaled price `chi * y`.
///
/// `P` is the characteristic polynomial; its smallest root strictly above
/// the anchor is the pole that bounds the search. An anchor that *is* a root
/// (within 1e-9) makes the equation degenerate and the solution exactly
/// linear, `chi == anchor` for every `y`. Valid for `y in (0, knot]`.
pub fn scaled_price_root(
    cp: &CharPoly,
    anchor: f64,
    y: f64,
    knot: f64,
) -> Result<f64, SynthesisError> {
    assert!(anchor > 0.0 && knot > 0.0);
    if !(y > 0.0 && y <= knot * (1.0 + 1e-12)) {
        return Err(SynthesisError::BadInput(format!(
            "scaled root queried at y={y} outside (0, {knot}]"
        )));
    }
    let near = |r: f64| (anchor - r).abs() <= 1e-9 * r.max(1.0);
    let degenerate = match cp.positive_roots() {
        CharRoots::None => false,
        CharRoots::Coincident(r) => near(r),
        CharRoots::Two(r1, r2) => near(r1) || near(r2),
    };
    if degenerate || y >= knot {
        return Ok(anchor * y);
    }
    let target = (knot / y).ln();
    let s = cp.exponent();
    let integrand = |eta: f64| eta.powf(s - 1.0) / cp.eval(eta);
    let grow = |from: f64, to: f64| integrate(integrand, from, to, 1e-12);
    let pole = cp.next_root_above(anchor * (1.0 + 1e-9));

    // Upward march from the anchor, every hop damped to at most a quarter
    // of the remaining distance to the pole. The integral diverges there,
    // so the accumulated value crosses any target before the iterates reach
    // the singular layer, and since all increments are positive no
    // cancellation pollutes the running sum.
    let mut chi = anchor;
    let mut g = 0.0;
    let mut bracket = None;
    for _ in 0..256 {
        let slope = integrand(chi);
        let newton = if slope.is_finite() && slope > 0.0 {
            chi + (target - g) / slope
        } else {
            f64::INFINITY
        };
        let cap = match pole {
            Some(p) => chi + 0.25 * (p - chi),
            None => 2.0 * chi,
        };
        let next = newton.min(cap);
        if !(next > chi) {
            // no representable progress: the solution hugs the anchor
            return Ok(chi * y);
        }
        let dg = grow(chi, next);
        if g + dg >= target {
            bracket = Some((chi, g, next, g + dg));
            break;
        }
        g += dg;
        chi = next;
    }
    let Some((floor, g_floor, mut hi, mut g_hi)) = bracket else {
        return Err(SynthesisError::NoRoot {
            what: "scaled price equation over the pole-bounded bracket",
        });
    };

    // Safeguarded secant inside the bracket, alternated with bisection so
    // the width provably collapses. Every trial integrates afresh from the
    // bracket floor, keeping the error of each evaluation independent.
    let tol_g = 1e-11 * target.max(1.0);
    let (mut lo, mut g_lo) = (floor, g_floor);
    for iter in 0..128 {
        if (g_lo - target).abs() <= tol_g {
            return Ok(lo * y);
        }
        if (g_hi - target).abs() <= tol_g {
            return Ok(hi * y);
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
        let x = if iter % 2 == 0 {
            let t = ((target - g_lo) / (g_hi - g_lo)).clamp(0.1, 0.9);
            lo + t * (hi - lo)
        } else {
            0.5 * (lo + hi)
        };
        let g_x = g_floor + grow(floor, x);
        if g_x < target {
            lo = x;
            g_lo = g_x;
        } else {
            hi = x;
            g_hi = g_x;
        }
    }
    Ok(0.5 * (lo + hi) * y)
}

/// How a branch computes its price from utilization.
#[derive(Debug, Clone, Copy, PartialEq)]
enum BranchKind {
    /// `factor * f'(y)`.
    MarginalMultiple { factor: f64 },
    /// `f'(1) * (chi(y) * y)^(s-1)` with `chi` from [`scaled_price_root`].
    ScaledRoot { alpha: f64, anchor: f64, knot: f64 },
    /// Closed-form exponential tail from [`phi_ivp`].
    IvpTail { alpha: f64, u: f64 },
    /// `base * ratio^(2y - 1)`; the doubling benchmark's ramp to the ceiling.
    ExpRamp { base: f64, ratio: f64 },
    Constant { price: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Branch {
    lo: f64,
    hi: f64,
    kind: BranchKind,
}

/// Knot summary of a synthesized curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Knots {
    /// Low ceiling: scaled branch up to `m`, constant `p_bar` beyond.
    Luc { m: f64 },
    /// Moderate high ceiling: scaled branch to `u`, tail reaching `p_bar`
    /// at `rho`, constant beyond.
    Huc1 { u: f64, rho: f64 },
    /// Steep high ceiling: rescaled marginal to `u_cdt`, tail to 1.
    Huc2 { u_cdt: f64 },
    /// Benchmarks carry no synthesis knots.
    Benchmark,
}

/// Dense samples of a scaled-root branch: strictly increasing utilizations
/// with their prices, linearly interpolated between nodes.
#[derive(Debug, Clone)]
struct ScaledTable {
    ys: Vec<f64>,
    phis: Vec<f64>,
    /// chi at the deep end of the table; below the first node the curve is
    /// treated as exactly linear in the scaled variable.
    chi_deep: f64,
}

impl ScaledTable {
    fn eval(&self, y: f64, c_bar: f64, s: f64) -> f64 {
        if y <= self.ys[0] {
            return c_bar * (self.chi_deep * y).powf(s - 1.0);
        }
        let n = self.ys.len();
        if y >= self.ys[n - 1] {
            return self.phis[n - 1];
        }
        let idx = self.ys.partition_point(|&yi| yi <= y);
        let (y0, y1) = (self.ys[idx - 1], self.ys[idx]);
        let (p0, p1) = (self.phis[idx - 1], self.phis[idx]);
        p0 + (p1 - p0) * (y - y0) / (y1 - y0)
    }
}

/// Number of tabulation nodes per scaled branch when none is specified.
pub const DEFAULT_TABLE_NODES: usize = 1 << 14;

/// A posted-price curve for one resource. Branches cover `[0, domain_end]`;
/// beyond `domain_end` the price continues as the constant it reached there.
#[derive(Debug, Clone)]
pub struct PricingFunction {
    pub regime: Regime,
    /// Worst-case ratio guaranteed by the curve; absent for benchmarks.
    pub alpha: Option<f64>,
    pub knots: Knots,
    pub domain_end: f64,
    cost: CostModel,
    p_bar: f64,
    branches: Vec<Branch>,
    extension_price: f64,
    tables: Vec<Option<ScaledTable>>,
}

impl PricingFunction {
    pub fn cost_model(&self) -> &CostModel {
        &self.cost
    }

    pub fn p_bar(&self) -> f64 {
        self.p_bar
    }

    pub fn extension_price(&self) -> f64 {
        self.extension_price
    }

    pub fn is_tabulated(&self) -> bool {
        self.tables.iter().any(Option::is_some)
    }

    /// Price quoted at utilization `y`. Negative inputs within rounding are
    /// clamped; anything past `domain_end` gets the constant extension.
    pub fn price(&self, y: f64) -> f64 {
        assert!(y.is_finite(), "utilization must be finite");
        let y = y.max(0.0);
        if y > self.domain_end {
            return self.extension_price;
        }
        let idx = self
            .branches
            .iter()
            .position(|b| y < b.hi)
            .unwrap_or(self.branches.len() - 1);
        if let Some(table) = &self.tables[idx] {
            return table.eval(y, self.cost.marginal_cap(), self.cost.exponent());
        }
        self.eval_branch(&self.branches[idx], y)
    }

    fn eval_branch(&self, b: &Branch, y: f64) -> f64 {
        let c_bar = self.cost.marginal_cap();
        let s = self.cost.exponent();
        match b.kind {
            BranchKind::MarginalMultiple { factor } => factor * c_bar * y.powf(s - 1.0),
            BranchKind::ScaledRoot { alpha, anchor, knot } => {
                if y == 0.0 {
                    return 0.0;
                }
                let cp = CharPoly::new(s, alpha);
                let scaled = scaled_price_root(&cp, anchor, y, knot)
                    .expect("synthesized scaled branch is solvable on its domain");
                c_bar * scaled.powf(s - 1.0)
            }
            BranchKind::IvpTail { alpha, u } => phi_ivp_at(c_bar, s, alpha, u, y.max(u)),
            BranchKind::ExpRamp { base, ratio } => base * ratio.powf(2.0 * y - 1.0),
            BranchKind::Constant { price } => price,
        }
    }

    /// Replace scaled-root branches by dense lookup tables with `nodes`
    /// nodes each. Closed-form branches stay exact. The marching grid is
    /// uniform in the integrated variable, so node spacing is a constant
    /// *relative* step in utilization and interpolation error stays well
    /// below 1e-5 everywhere.
    pub fn tabulated(mut self, nodes: usize) -> Self {
        assert!(nodes >= 16, "tabulation needs a meaningful node count");
        let c_bar = self.cost.marginal_cap();
        let s = self.cost.exponent();
        self.tables = self
            .branches
            .iter()
            .map(|b| match b.kind {
                BranchKind::ScaledRoot { alpha, anchor, knot } => {
                    Some(build_scaled_table(s, c_bar, alpha, anchor, knot, nodes))
                }
                _ => None,
            })
            .collect();
        self
    }

    pub fn on_the_fly(mut self) -> Self {
        self.tables = vec![None; self.branches.len()];
        self
    }

    /// Write `n + 1` samples of the curve over `[0, 1]` as `y,phi` rows.
    pub fn write_curve_csv<W: Write>(&self, mut out: W, n: usize) -> io::Result<()> {
        assert!(n >= 1);
        writeln!(out, "y,phi")?;
        for i in 0..=n {
            let y = i as f64 / n as f64;
            writeln!(out, "{y},{}", self.price(y))?;
        }
        Ok(())
    }
}

/// March the scaled variable from the anchor toward its pole, accumulating
/// the integral so every node is an exact (utilization, price) pair of the
/// scaled root equation; linear interpolation fills the gaps.
fn build_scaled_table(
    s: f64,
    c_bar: f64,
    alpha: f64,
    anchor: f64,
    knot: f64,
    nodes: usize,
) -> ScaledTable {
    let cp = CharPoly::new(s, alpha);
    let near = |r: f64| (anchor - r).abs() <= 1e-9 * r.max(1.0);
    let degenerate = match cp.positive_roots() {
        CharRoots::None => false,
        CharRoots::Coincident(r) => near(r),
        CharRoots::Two(r1, r2) => near(r1) || near(r2),
    };
    if degenerate {
        // chi = anchor * y on the whole branch, so the deep-end formula is
        // exact everywhere below the knot; a single node closes the table.
        // Two nodes would put interior queries on the interpolation path,
        // which is linear in phi, not in chi.
        return ScaledTable {
            ys: vec![knot],
            phis: vec![c_bar * (anchor * knot).powf(s - 1.0)],
            chi_deep: anchor,
        };
    }
    let pole = cp.next_root_above(anchor * (1.0 + 1e-9));
    let cap = match pole {
        Some(b) => b * (1.0 - 1e-12),
        None => 1e3 * anchor,
    };
    // Covers y down to knot * e^-G_MAX, far below anything representable in
    // an instance; deeper queries use the linear continuation at chi_deep.
    const G_MAX: f64 = 36.0;
    let dg_target = G_MAX / nodes as f64;
    let integrand = |eta: f64| eta.powf(s - 1.0) / cp.eval(eta);
    let mut chi = anchor;
    let mut g_acc = 0.0;
    let mut rev_ys = Vec::with_capacity(nodes + 1);
    let mut rev_phis = Vec::with_capacity(nodes + 1);
    rev_ys.push(knot);
    rev_phis.push(c_bar * (anchor * knot).powf(s - 1.0));
    for _ in 0..nodes {
        let slope = integrand(chi);
        let mut step = (dg_target / slope).min((cap - chi) * 0.25);
        if step <= cap * 1e-16 {
            break;
        }
        if chi + step > cap {
            step = cap - chi;
        }
        let next = chi + step;
        g_acc += integrate(integrand, chi, next, 1e-9);
        chi = next;
        let y = knot * (-g_acc).exp();
        rev_ys.push(y);
        rev_phis.push(c_bar * (chi * y).powf(s - 1.0));
        if g_acc >= G_MAX {
            break;
        }
    }
    rev_ys.reverse();
    rev_phis.reverse();
    ScaledTable {
        ys: rev_ys,
        phis: rev_phis,
        chi_deep: chi,
    }
}

/// Synthesize the worst-case-optimal pricing function for one resource.
///
/// `choice in [0, 1]` selects a member of the optimal family where one
/// exists: it slides the knot from the most conservative optimum (0) to the
/// most aggressive, pointwise-lowest one (1). The steep regime has a unique
/// curve and ignores `choice`.
pub fn synthesize_optimal(
    rs: &ResourceSetup,
    choice: f64,
) -> Result<PricingFunction, SynthesisError> {
    if !(0.0..=1.0).contains(&choice) || !choice.is_finite() {
        return Err(SynthesisError::BadInput(format!(
            "family choice {choice} outside [0, 1]"
        )));
    }
    let regime = classify(rs);
    let rc = regime_constants(rs.s());
    match regime.tag {
        RegimeTag::Luc => {
            let v = regime.v.expect("low-ceiling regime carries v");
            let w = regime.w.expect("low-ceiling regime carries w");
            let m = w + choice * (v - w);
            let branches = vec![Branch {
                lo: 0.0,
                hi: m,
                kind: BranchKind::ScaledRoot {
                    alpha: rc.alpha_min,
                    anchor: v / m,
                    knot: m,
                },
            }];
            let mut pf = PricingFunction {
                regime,
                alpha: Some(rc.alpha_min),
                knots: Knots::Luc { m },
                domain_end: m,
                cost: rs.cost,
                p_bar: rs.p_bar,
                branches,
                extension_price: 0.0,
                tables: vec![None],
            };
            pf.extension_price = pf.price(m);
            Ok(pf)
        }
        RegimeTag::Huc1 => {
            let u_cdt = critical_dividing_threshold(rs)?;
            let u = rc.u_s + choice * (u_cdt - rc.u_s);
            let rho = solve_tail_hits_ceiling(rs, u)?;
            let branches = vec![
                Branch {
                    lo: 0.0,
                    hi: u,
                    kind: BranchKind::ScaledRoot {
                        alpha: rc.alpha_min,
                        anchor: 1.0 / u,
                        knot: u,
                    },
                },
                Branch {
                    lo: u,
                    hi: rho,
                    kind: BranchKind::IvpTail {
                        alpha: rc.alpha_min,
                        u,
                    },
                },
            ];
            let mut pf = PricingFunction {
                regime,
                alpha: Some(rc.alpha_min),
                knots: Knots::Huc1 { u, rho },
                domain_end: rho,
                cost: rs.cost,
                p_bar: rs.p_bar,
                branches,
                extension_price: 0.0,
                tables: vec![None, None],
            };
            pf.extension_price = pf.price(rho);
            Ok(pf)
        }
        RegimeTag::Huc2 => {
            let u_cdt = critical_dividing_threshold(rs)?;
            let alpha = alpha_of_u(rs.s(), u_cdt);
            let branches = vec![
                Branch {
                    lo: 0.0,
                    hi: u_cdt,
                    kind: BranchKind::MarginalMultiple {
                        factor: (1.0 / u_cdt).powf(rs.s() - 1.0),
                    },
                },
                Branch {
                    lo: u_cdt,
                    hi: 1.0,
                    kind: BranchKind::IvpTail { alpha, u: u_cdt },
                },
            ];
            let mut pf = PricingFunction {
                regime,
                alpha: Some(alpha),
                knots: Knots::Huc2 { u_cdt },
                domain_end: 1.0,
                cost: rs.cost,
                p_bar: rs.p_bar,
                branches,
                extension_price: 0.0,
                tables: vec![None, None],
            };
            pf.extension_price = pf.price(1.0);
            Ok(pf)
        }
    }
}

/// Worst-case ratio of the synthesized curve without building it.
pub fn optimal_ratio(rs: &ResourceSetup) -> Result<f64, SynthesisError> {
    let regime = classify(rs);
    let rc = regime_constants(rs.s());
    match regime.tag {
        RegimeTag::Luc | RegimeTag::Huc1 => Ok(rc.alpha_min),
        RegimeTag::Huc2 => {
            let u_cdt = critical_dividing_threshold(rs)?;
            Ok(alpha_of_u(rs.s(), u_cdt))
        }
    }
}

/// Pricing actually deployed for a ceiling estimate.
///
/// Every estimate at or below the capacity price deploys one shared curve:
/// `s * f'(y)` up to the dividing threshold `u_s`, then the tail trajectory
/// on to the capacity price at full utilization. Quoting that curve decides
/// exactly like the truncated member synthesized from the estimate itself,
/// because each quote past the member's domain end exceeds the estimate and
/// with it every admissible value. Deployed behavior is therefore invariant
/// to ceiling estimation error until the estimate crosses the capacity
/// price; past that the design genuinely changes and the steep-regime curve
/// is synthesized from the estimate.
pub fn deployment_pricing(rs: &ResourceSetup) -> Result<PricingFunction, SynthesisError> {
    let cap = capacity_price(rs);
    if rs.p_bar <= cap {
        synthesize_optimal(&ResourceSetup::new(rs.cost, cap), 0.0)
    } else {
        synthesize_optimal(rs, 0.0)
    }
}

/// Reference schemes the experiments compare against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkKind {
    /// Quote the current marginal cost, `phi(y) = f'(y)`.
    Marginal,
    /// Quote the marginal at twice the utilization, `f'(2y)`, then ramp
    /// exponentially from `f'(1)` to the ceiling over the upper half.
    TwiceMarginal,
}

pub fn benchmark_pricing(kind: BenchmarkKind, rs: &ResourceSetup) -> PricingFunction {
    let regime = classify(rs);
    let c_bar = rs.c_bar();
    let s = rs.s();
    let (branches, extension) = match kind {
        BenchmarkKind::Marginal => (
            vec![Branch {
                lo: 0.0,
                hi: 1.0,
                kind: BranchKind::MarginalMultiple { factor: 1.0 },
            }],
            c_bar,
        ),
        BenchmarkKind::TwiceMarginal => {
            let lower = Branch {
                lo: 0.0,
                hi: 0.5,
                kind: BranchKind::MarginalMultiple {
                    factor: 2f64.powf(s - 1.0),
                },
            };
            let upper = if rs.p_bar > c_bar {
                Branch {
                    lo: 0.5,
                    hi: 1.0,
                    kind: BranchKind::ExpRamp {
                        base: c_bar,
                        ratio: rs.p_bar / c_bar,
                    },
                }
            } else {
                Branch {
                    lo: 0.5,
                    hi: 1.0,
                    kind: BranchKind::Constant { price: c_bar },
                }
            };
            (vec![lower, upper], rs.p_bar.max(c_bar))
        }
    };
    let n = branches.len();
    PricingFunction {
        regime,
        alpha: None,
        knots: Knots::Benchmark,
        domain_end: 1.0,
        cost: rs.cost,
        p_bar: rs.p_bar,
        branches,
        extension_price: extension,
        tables: vec![None; n],
    }
}
