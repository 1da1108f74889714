//! Closed forms for scalar plants.
//!
//! For `n = m = 1` the critical rates coincide: `p_lower = p_upper = p_c =
//! 1 − 1/a²`. The bounds reduce to
//!
//! ```text
//! S(p)  = q / (1 − (1 − p·p2)·a²)
//! p*    = p_c/p2 + q/(M·p2·a²)
//! V     = positive root of c²(a²(1−λ)−1)·V² + ((a²−1)·r + q·c²)·V + q·r = 0
//! ```
//!
//! The `V` quadratic is `V = g_λ(V)` with the denominator cleared.

use serde::{Deserialize, Serialize};

use crate::{Error, LinearSystem, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSystem {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
}

impl ScalarSystem {
    pub fn new(a: f64, c: f64, q: f64, r: f64) -> Result<Self> {
        if !(a.abs() > 1.0) || !a.is_finite() {
            return Err(Error::Domain(format!("|a| must exceed 1, got {a}")));
        }
        if c == 0.0 || !c.is_finite() {
            return Err(Error::Domain("c must be nonzero".into()));
        }
        if !(q > 0.0 && r > 0.0) || !q.is_finite() || !r.is_finite() {
            return Err(Error::Domain(format!("q and r must be positive, got q={q}, r={r}")));
        }
        Ok(Self { a, c, q, r })
    }

    pub fn from_system(sys: &LinearSystem) -> Result<Self> {
        if !sys.is_scalar() {
            return Err(Error::Dimension(format!(
                "scalar closed forms need n = m = 1, got n={}, m={}",
                sys.n(),
                sys.m()
            )));
        }
        Self::new(sys.a()[(0, 0)], sys.c()[(0, 0)], sys.q()[(0, 0)], sys.r()[(0, 0)])
    }
}

/// `1 − 1/a²`.
pub fn scalar_critical(s: &ScalarSystem) -> f64 {
    1.0 - 1.0 / (s.a * s.a)
}

/// `S(p)`, or `+∞` when `p·p2 ≤ p_c`.
pub fn scalar_s(p: f64, p2: f64, s: &ScalarSystem) -> f64 {
    let rate = p * p2;
    if rate <= scalar_critical(s) {
        return f64::INFINITY;
    }
    s.q / (1.0 - (1.0 - rate) * s.a * s.a)
}

/// Optimal withholding probability for secrecy floor `m`, clamped to
/// `[0, 1]`.
///
/// Requires `p2 > p_c` (the eavesdropper is bounded without withholding)
/// and `m ≥ S(1)` (the constraint is active).
pub fn scalar_p_star(m: f64, p2: f64, s: &ScalarSystem) -> Result<f64> {
    let pc = scalar_critical(s);
    if !(p2 > pc) || p2 > 1.0 {
        return Err(Error::Domain(format!(
            "p2 = {p2} must exceed p_c = {pc}: without withholding the eavesdropper is already unbounded"
        )));
    }
    let s1 = scalar_s(1.0, p2, s);
    if !(m >= s1) {
        return Err(Error::Domain(format!(
            "secrecy floor M = {m} is below S(1) = {s1}; the constraint is inactive"
        )));
    }
    let p = pc / p2 + s.q / (m * p2 * s.a * s.a);
    Ok(p.clamp(0.0, 1.0))
}

/// `V` at effective user rate `pp1`, or `+∞` when `pp1 ≤ p_c`.
pub fn scalar_v(pp1: f64, s: &ScalarSystem) -> f64 {
    if pp1 <= scalar_critical(s) {
        return f64::INFINITY;
    }
    let a2 = s.a * s.a;
    let c2 = s.c * s.c;
    // quad < 0 in this regime, so the roots have opposite signs.
    let quad = c2 * (a2 * (1.0 - pp1) - 1.0);
    let lin = (a2 - 1.0) * s.r + s.q * c2;
    let cst = s.q * s.r;
    let disc = lin * lin - 4.0 * quad * cst;
    // lin > 0, so the numerator has no cancellation.
    (lin + disc.sqrt()) / (-2.0 * quad)
}
