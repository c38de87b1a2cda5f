//! Numerical kernels shared by the pricing synthesis: the lower incomplete
//! gamma function, the characteristic polynomial whose roots separate linear
//! from curved scaled price solutions, adaptive quadrature, and bracketed
//! bisection. Everything here is plain `f64`; tolerances follow the contracts
//! asserted in the test suite.

use std::fmt;

use statrs::function::gamma;

#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    /// Bisection bracket endpoints do not straddle a sign change.
    NoSignChange { lo: f64, hi: f64 },
    /// Quadrature interval contains a pole of the integrand.
    SingularInterval { root: f64, lo: f64, hi: f64 },
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericsError::NoSignChange { lo, hi } => {
                write!(f, "no sign change over [{lo}, {hi}]")
            }
            NumericsError::SingularInterval { root, lo, hi } => {
                write!(f, "integrand pole at {root} inside [{lo}, {hi}]")
            }
        }
    }
}

impl std::error::Error for NumericsError {}

/// Lower incomplete gamma `integral_0^x t^(s-1) e^(-t) dt` for `s > 0`,
/// `x >= 0`. Thin wrapper so the crate has a single entry point with the
/// conventions pinned down (unnormalized, lower tail).
pub fn lower_incomplete_gamma(s: f64, x: f64) -> f64 {
    assert!(s > 0.0, "shape must be positive");
    assert!(x >= 0.0, "argument must be nonnegative");
    if x == 0.0 {
        return 0.0;
    }
    gamma::gamma_li(s, x)
}

/// Smallest ratio parameter for which the characteristic polynomial has a
/// positive real root: `s^(s/(s-1))`.
pub fn alpha_min(s: f64) -> f64 {
    assert!(s > 1.0, "exponent must exceed 1");
    s.powf(s / (s - 1.0))
}

/// Positive real roots of the characteristic polynomial, see
/// [`CharPoly::positive_roots`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CharRoots {
    None,
    /// Double root `s^(1/(s-1))`, reached exactly when alpha bottoms out.
    Coincident(f64),
    /// Two simple roots bracketing the minimizer `alpha/s`, ascending.
    Two(f64, f64),
}

/// `P(eta) = eta^s - (alpha/(s-1)) * eta^(s-1) + alpha/(s-1)`.
///
/// Scaled price curves solve an integral equation whose integrand is
/// `eta^(s-1) / P(eta)`; the positive roots of `P` are the poles that bound
/// how far those curves can be continued.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharPoly {
    s: f64,
    alpha: f64,
}

/// Below this distance from the minimal alpha the two roots are numerically
/// indistinguishable and are reported as coincident.
const COINCIDENT_ALPHA_TOL: f64 = 1e-9;

/// Alphas this far below the minimum genuinely have no positive root.
const NO_ROOT_ALPHA_TOL: f64 = 1e-12;

impl CharPoly {
    pub fn new(s: f64, alpha: f64) -> Self {
        assert!(s > 1.0, "exponent must exceed 1");
        assert!(alpha > 0.0, "ratio parameter must be positive");
        CharPoly { s, alpha }
    }

    pub fn exponent(&self) -> f64 {
        self.s
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eval(&self, eta: f64) -> f64 {
        let q = self.alpha / (self.s - 1.0);
        eta.powf(self.s) - q * eta.powf(self.s - 1.0) + q
    }

    /// All positive real roots. `P` is positive at 0 and at infinity with a
    /// unique interior minimum at `eta = alpha/s`, so there are either no
    /// positive roots (alpha below the minimum), a double root, or exactly
    /// two simple ones.
    pub fn positive_roots(&self) -> CharRoots {
        let amin = alpha_min(self.s);
        if (self.alpha - amin).abs() < COINCIDENT_ALPHA_TOL {
            return CharRoots::Coincident(self.s.powf(1.0 / (self.s - 1.0)));
        }
        if self.alpha < amin - NO_ROOT_ALPHA_TOL {
            return CharRoots::None;
        }
        let eta_min = self.alpha / self.s;
        debug_assert!(self.eval(eta_min) < 0.0);
        let lower = bisect(|e| self.eval(e), 0.0, eta_min, 1e-13)
            .expect("sign change between 0 and the minimizer");
        let mut hi = eta_min.max(1.0);
        for _ in 0..200 {
            hi *= 2.0;
            if self.eval(hi) > 0.0 {
                break;
            }
        }
        let upper = bisect(|e| self.eval(e), eta_min, hi, 1e-13)
            .expect("sign change between the minimizer and +inf");
        CharRoots::Two(self.polish(lower), self.polish(upper))
    }

    /// Newton steps to drive a bisection root to machine precision; matters
    /// for steep roots where a width-based stop leaves a visible residual.
    fn polish(&self, mut r: f64) -> f64 {
        for _ in 0..3 {
            let d = self.s * r.powf(self.s - 1.0)
                - self.alpha * r.powf(self.s - 2.0);
            if d == 0.0 || !d.is_finite() {
                break;
            }
            let step = self.eval(r) / d;
            if !step.is_finite() {
                break;
            }
            let next = r - step;
            if next <= 0.0 || !next.is_finite() {
                break;
            }
            r = next;
        }
        r
    }

    /// Smallest positive root strictly greater than `x`, if any.
    pub fn next_root_above(&self, x: f64) -> Option<f64> {
        match self.positive_roots() {
            CharRoots::None => None,
            CharRoots::Coincident(r) => (r > x).then_some(r),
            CharRoots::Two(r1, r2) => {
                if r1 > x {
                    Some(r1)
                } else if r2 > x {
                    Some(r2)
                } else {
                    None
                }
            }
        }
    }

    fn root_inside(&self, lo: f64, hi: f64) -> Option<f64> {
        let check = |r: f64| (lo..=hi).contains(&r).then_some(r);
        match self.positive_roots() {
            CharRoots::None => None,
            CharRoots::Coincident(r) => check(r),
            CharRoots::Two(r1, r2) => check(r1).or_else(|| check(r2)),
        }
    }
}

/// `integral_lo^hi eta^(s-1) / P(eta) deta`, refusing intervals that contain
/// a pole of the integrand. Zero-width intervals integrate to zero even at a
/// pole. Relative accuracy target is 1e-9.
pub fn char_integral(cp: &CharPoly, lo: f64, hi: f64) -> Result<f64, NumericsError> {
    assert!(lo >= 0.0 && hi >= 0.0, "integration bounds must be nonnegative");
    if lo == hi {
        return Ok(0.0);
    }
    let (a, b, sign) = if lo < hi { (lo, hi, 1.0) } else { (hi, lo, -1.0) };
    if let Some(root) = cp.root_inside(a, b) {
        return Err(NumericsError::SingularInterval { root, lo: a, hi: b });
    }
    let sm1 = cp.exponent() - 1.0;
    let val = integrate(|eta| eta.powf(sm1) / cp.eval(eta), a, b, 1e-9);
    Ok(sign * val)
}

const SIMPSON_MAX_DEPTH: u32 = 60;
const SIMPSON_ABS_FLOOR: f64 = 1e-14;
/// Total split budget per call. Near-singular integrands (a price pole just
/// outside the interval) can demand tolerances no subdivision meets; without
/// a global cap the eps-halving recursion degenerates to ~2^depth work.
const SIMPSON_SPLIT_BUDGET: u64 = 1 << 18;

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
    budget: &mut u64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || *budget == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    *budget -= 1;
    adapt(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1, budget)
        + adapt(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1, budget)
}

/// Adaptive Simpson quadrature with Richardson correction. The tolerance is
/// relative to the magnitude of the integral, with an absolute floor so
/// near-zero integrals terminate. Depth is capped; intervals still failing
/// at the cap return their best estimate, which keeps endpoint boundary
/// layers finite instead of recursing forever.
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    if lo == hi {
        return 0.0;
    }
    assert!(lo < hi, "integrate expects lo < hi");
    let fa = f(lo);
    let fm = f(0.5 * (lo + hi));
    let fb = f(hi);
    let whole = simpson(fa, fm, fb, lo, hi);
    let mut eps = SIMPSON_ABS_FLOOR.max(rel_tol * whole.abs());
    let mut budget = SIMPSON_SPLIT_BUDGET;
    let mut result = adapt(&f, lo, hi, fa, fm, fb, whole, eps, SIMPSON_MAX_DEPTH, &mut budget);
    // A wild first Simpson estimate (e.g. a huge endpoint value) inflates the
    // tolerance; redo with the tolerance pinned to the first converged value.
    let eps2 = SIMPSON_ABS_FLOOR.max(rel_tol * result.abs());
    if eps2 * 4.0 < eps {
        eps = eps2;
        budget = SIMPSON_SPLIT_BUDGET;
        result = adapt(&f, lo, hi, fa, fm, fb, whole, eps, SIMPSON_MAX_DEPTH, &mut budget);
    }
    result
}

/// Bracketed bisection. Terminates when `|g(mid)| <= tol` or the bracket
/// width drops below `tol * max(1, |mid|)`; errors when the endpoints do not
/// straddle a sign change.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut g: F,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64, NumericsError> {
    assert!(tol > 0.0);
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let glo = g(lo);
    if glo == 0.0 {
        return Ok(lo);
    }
    let ghi = g(hi);
    if ghi == 0.0 {
        return Ok(hi);
    }
    if glo.signum() == ghi.signum() {
        return Err(NumericsError::NoSignChange { lo, hi });
    }
    let mut sign_lo = glo.signum();
    // Width termination bounds the loop at ~2100 halvings for any f64 span.
    for _ in 0..4000 {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm.abs() <= tol || (hi - lo) <= tol * mid.abs().max(1.0) {
            return Ok(mid);
        }
        if gm.signum() == sign_lo {
            lo = mid;
            sign_lo = gm.signum();
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_matches_exponential_shape() {
        // s = 1: integral_0^x e^-t dt = 1 - e^-x
        for i in 0..=40 {
            let x = i as f64 * 0.5;
            assert_relative_eq!(
                lower_incomplete_gamma(1.0, x),
                1.0 - (-x).exp(),
                max_relative = 1e-12,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn gamma_matches_cubic_shape() {
        // s = 3: integral_0^x t^2 e^-t dt = 2 - e^-x (x^2 + 2x + 2)
        for i in 1..=30 {
            let x = i as f64 * 0.4;
            let exact = 2.0 - (-x).exp() * (x * x + 2.0 * x + 2.0);
            assert_relative_eq!(
                lower_incomplete_gamma(3.0, x),
                exact,
                max_relative = 1e-11
            );
        }
        // saturation at the complete gamma value
        assert_relative_eq!(lower_incomplete_gamma(3.0, 700.0), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn gamma_is_monotone_and_additive_in_upper_limit() {
        let mut prev = 0.0;
        for i in 1..=50 {
            let x = i as f64 * 0.3;
            let v = lower_incomplete_gamma(1.2, x);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn char_poly_example_values() {
        let cp = CharPoly::new(2.0, 4.0);
        assert_relative_eq!(cp.eval(2.0), 0.0, epsilon = 1e-12);
        let cp = CharPoly::new(2.0, 8.0);
        assert_relative_eq!(cp.eval(1.0), 1.0);
        // double root of the cubic case at sqrt(3)
        let cp3 = CharPoly::new(3.0, alpha_min(3.0));
        assert!(cp3.eval(3f64.sqrt()).abs() <= 1e-12);
    }

    #[test]
    fn char_poly_roots_quadratic_oracle() {
        // s = 2, alpha = 8: eta^2 - 8 eta + 8, roots 4 +- 2 sqrt(2)
        match CharPoly::new(2.0, 8.0).positive_roots() {
            CharRoots::Two(r1, r2) => {
                assert!((r1 - (4.0 - 2.0 * 2f64.sqrt())).abs() <= 1e-10);
                assert!((r2 - (4.0 + 2.0 * 2f64.sqrt())).abs() <= 1e-10);
            }
            other => panic!("expected two roots, got {other:?}"),
        }
        match CharPoly::new(2.0, 4.0).positive_roots() {
            CharRoots::Coincident(r) => assert!((r - 2.0).abs() <= 1e-10),
            other => panic!("expected coincident root, got {other:?}"),
        }
        assert_eq!(CharPoly::new(2.0, 3.0).positive_roots(), CharRoots::None);
    }

    #[test]
    fn char_poly_root_residuals_small() {
        for &(s, alpha) in &[(1.2, 4.0), (1.5, 7.0), (2.0, 8.0), (3.0, 9.0), (3.0, 40.0)] {
            let cp = CharPoly::new(s, alpha);
            if let CharRoots::Two(r1, r2) = cp.positive_roots() {
                assert!(cp.eval(r1).abs() <= 1e-10, "s={s} alpha={alpha} r1");
                assert!(cp.eval(r2).abs() <= 1e-10, "s={s} alpha={alpha} r2");
                assert!(r1 < alpha / s && alpha / s < r2);
            } else {
                panic!("expected two roots for s={s} alpha={alpha}");
            }
        }
    }

    #[test]
    fn char_integral_zero_width() {
        let cp = CharPoly::new(2.0, 4.0);
        assert_eq!(char_integral(&cp, 2.0, 2.0).unwrap(), 0.0);
        assert_eq!(char_integral(&cp, 0.7, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn char_integral_quadratic_partial_fractions_oracle() {
        // s = 2, alpha = 8 over [7, 8]: integrand eta / ((eta-r1)(eta-r2))
        let cp = CharPoly::new(2.0, 8.0);
        let r1 = 4.0 - 2.0 * 2f64.sqrt();
        let r2 = 4.0 + 2.0 * 2f64.sqrt();
        let a = r1 / (r1 - r2);
        let b = r2 / (r2 - r1);
        let exact = a * ((8.0 - r1) / (7.0 - r1)).ln() + b * ((8.0 - r2) / (7.0 - r2)).ln();
        let got = char_integral(&cp, 7.0, 8.0).unwrap();
        assert_relative_eq!(got, exact, max_relative = 1e-9);
    }

    #[test]
    fn char_integral_near_double_root_oracle() {
        // s = 2, alpha = 4: integrand eta/(eta-2)^2 with antiderivative
        // ln(2-eta) - 2/(eta-2); steep but pole-free on [1.9, 1.99].
        let cp = CharPoly::new(2.0, 4.0);
        let anti = |e: f64| (2.0 - e).ln() - 2.0 / (e - 2.0);
        let exact = anti(1.99) - anti(1.9);
        let got = char_integral(&cp, 1.9, 1.99).unwrap();
        assert_relative_eq!(got, exact, max_relative = 1e-7);
    }

    #[test]
    fn char_integral_rejects_interval_with_pole() {
        let cp = CharPoly::new(2.0, 4.0);
        match char_integral(&cp, 1.9, 2.01) {
            Err(NumericsError::SingularInterval { root, .. }) => {
                assert!((root - 2.0).abs() <= 1e-10)
            }
            other => panic!("expected pole rejection, got {other:?}"),
        }
    }

    #[test]
    fn integrate_smooth_oracle() {
        let got = integrate(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-10);
        assert_relative_eq!(got, 2.0, max_relative = 1e-9);
        let got = integrate(|x| x.exp(), 0.0, 1.0, 1e-11);
        assert_relative_eq!(got, std::f64::consts::E - 1.0, max_relative = 1e-10);
    }

    #[test]
    fn bisect_finds_roots() {
        let r = bisect(|x| x.cos(), 1.0, 2.0, 1e-12).unwrap();
        assert!((r - std::f64::consts::FRAC_PI_2).abs() <= 1e-11);
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 2f64.sqrt()).abs() <= 1e-11);
        // decreasing function
        let r = bisect(|x| 1.0 - x, 0.0, 5.0, 1e-12).unwrap();
        assert!((r - 1.0).abs() <= 1e-11);
    }

    #[test]
    fn bisect_rejects_bad_bracket() {
        assert!(matches!(
            bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-10),
            Err(NumericsError::NoSignChange { .. })
        ));
    }
}
