//! Power supply-cost family `f(y) = a * y^s` with `a > 0`, `s > 1`, together
//! with the derived quantities the rest of the crate leans on: the marginal
//! cost, its inverse, and the convex conjugate restricted to the capacitated
//! domain `y in [0, 1]`.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Tolerance for utilization-domain checks. Values outside `[0, 1]` by more
/// than this are rejected; values inside the band are clamped.
const DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum CostError {
    /// Input outside the admissible domain of the queried map.
    OutOfDomain { what: &'static str, value: f64 },
}

impl fmt::Display for CostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostError::OutOfDomain { what, value } => {
                write!(f, "{what} out of domain: {value}")
            }
        }
    }
}

impl std::error::Error for CostError {}

/// Increasing convex cost `f(y) = a * y^s` on `[0, 1]`.
///
/// The minimal marginal is `f'(0) = 0` and the maximal marginal is
/// `f'(1) = a * s`, exposed as [`CostModel::marginal_cap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    a: f64,
    s: f64,
}

impl CostModel {
    /// Panics unless `a > 0` and `s > 1`; those bounds are what make the
    /// marginal invertible and the conjugate finite on `[0, inf)`.
    pub fn new(a: f64, s: f64) -> Self {
        assert!(a > 0.0 && a.is_finite(), "cost scale must be positive");
        assert!(s > 1.0 && s.is_finite(), "cost exponent must exceed 1");
        CostModel { a, s }
    }

    pub fn scale(&self) -> f64 {
        self.a
    }

    pub fn exponent(&self) -> f64 {
        self.s
    }

    /// `f'(1) = a * s`, the highest marginal cost the supplier ever faces.
    pub fn marginal_cap(&self) -> f64 {
        self.a * self.s
    }

    /// `f'(0) = 0` for every power cost with `s > 1`.
    pub fn marginal_floor(&self) -> f64 {
        0.0
    }

    fn check_utilization(&self, y: f64) -> Result<f64, CostError> {
        if !((-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&y)) {
            return Err(CostError::OutOfDomain {
                what: "utilization",
                value: y,
            });
        }
        Ok(y.clamp(0.0, 1.0))
    }

    /// `f(y) = a * y^s` for `y in [0, 1]`.
    pub fn cost(&self, y: f64) -> Result<f64, CostError> {
        let y = self.check_utilization(y)?;
        Ok(self.a * y.powf(self.s))
    }

    /// `f'(y) = a * s * y^(s-1)` for `y in [0, 1]`.
    pub fn marginal(&self, y: f64) -> Result<f64, CostError> {
        let y = self.check_utilization(y)?;
        Ok(self.a * self.s * y.powf(self.s - 1.0))
    }

    /// Inverse of the marginal: the utilization at which the marginal cost
    /// reaches `p`. Prices above `f'(1)` saturate; the second component flags
    /// that the returned utilization was clamped to 1.
    pub fn inverse_marginal(&self, p: f64) -> Result<(f64, bool), CostError> {
        if p < -DOMAIN_TOL || !p.is_finite() {
            return Err(CostError::OutOfDomain {
                what: "price",
                value: p,
            });
        }
        let p = p.max(0.0);
        let cap = self.marginal_cap();
        if p > cap {
            return Ok((1.0, true));
        }
        Ok(((p / cap).powf(1.0 / (self.s - 1.0)), false))
    }

    /// Convex conjugate of `f` restricted to `y in [0, 1]`:
    /// `f#(p) = max_{y in [0,1]} (p*y - f(y))`, which is 0 for `p <= 0`,
    /// `p * f'^{-1}(p) - f(f'^{-1}(p))` for `0 < p < f'(1)`, and `p - f(1)`
    /// once the maximizer saturates at 1.
    pub fn conjugate(&self, p: f64) -> Result<f64, CostError> {
        if p < -DOMAIN_TOL || !p.is_finite() {
            return Err(CostError::OutOfDomain {
                what: "price",
                value: p,
            });
        }
        let p = p.max(0.0);
        let cap = self.marginal_cap();
        if p >= cap {
            return Ok(p - self.a);
        }
        let y = (p / cap).powf(1.0 / (self.s - 1.0));
        Ok(p * y - self.a * y.powf(self.s))
    }

    /// Derivative of the conjugate: the maximizing utilization itself.
    /// Zero at or below the marginal floor, `f'^{-1}(p)` strictly inside the
    /// marginal range, and 1 at or above the cap.
    pub fn conjugate_derivative(&self, p: f64) -> Result<f64, CostError> {
        if p < -DOMAIN_TOL || !p.is_finite() {
            return Err(CostError::OutOfDomain {
                what: "price",
                value: p,
            });
        }
        let p = p.max(0.0);
        if p == 0.0 {
            return Ok(0.0);
        }
        let cap = self.marginal_cap();
        if p >= cap {
            return Ok(1.0);
        }
        Ok((p / cap).powf(1.0 / (self.s - 1.0)))
    }
}
