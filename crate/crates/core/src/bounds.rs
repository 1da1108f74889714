//! Asymptotic error bounds and critical reception rates.
//!
//! - `p_lower = 1 − 1/ρ(A)²`: below it the eavesdropper lower bound `S(p)`
//!   is infinite.
//! - `p_upper = inf{λ : ∃X ⪰ 0, X ⪰ g_λ(X)}`: above it the user upper bound
//!   `V(p)` is finite.
//! - `S(p)` solves `S = (1 − p·p2) A S Aᵀ + Q`.
//! - `V(p)` solves `V = g_{p·p1}(V)`.
//!
//! The critical probability `p_c` of the intermittent filter satisfies
//! `p_lower ≤ p_c ≤ p_upper`. When the two coincide (scalar plants, square
//! invertible `C`) the bracket pins `p_c` exactly.
//!
//! Feasibility for `p_upper` is decided by iterating `g_λ` from `Σ0`.
//! Along the way the gain of the current iterate is used to build the linear
//! map `L_K(X) = (1−λ) A X Aᵀ + λ (A − KC) X (A − KC)ᵀ + Q + λ K R Kᵀ`; if
//! its fixed point is positive semidefinite it satisfies `X ⪰ g_λ(X)`
//! (since `g_λ = min_K L_K`), which settles feasibility without waiting for
//! the slow convergence near the transition.

use nalgebra::DMatrix;
use serde::{Serialize, Serializer};

use crate::channel::ChannelParams;
use crate::filter::riccati_map;
use crate::linmodel::{
    max_abs, min_sym_eigenvalue, solve_discounted_lyapunov, solve_vectorized, spectral_radius, symmetrize,
    LinearSystem,
};
use crate::serde_ext::{format_extended, rows};
use crate::{Error, Result};

pub const DEFAULT_FEASIBILITY_MAX_ITERS: usize = 100_000;
/// Divergence threshold for feasibility, as a multiple of `Tr Σ0`.
pub const DEFAULT_DIVERGENCE_FACTOR: f64 = 1e12;
pub const DEFAULT_FIXED_POINT_TOL: f64 = 1e-10;
pub const DEFAULT_FIXED_POINT_MAX_ITERS: usize = 100_000;
pub const DEFAULT_P_UPPER_TOL: f64 = 1e-6;

/// Iterations between certificate attempts.
const CERTIFICATE_EVERY: usize = 8;
const MAX_POLICY_STEPS: usize = 200;

/// `Tr S(p)` or `Tr V(p)`; infinite when the bound does not exist.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundValue {
    matrix: Option<DMatrix<f64>>,
    trace: f64,
}

impl BoundValue {
    pub fn infinite() -> Self {
        Self {
            matrix: None,
            trace: f64::INFINITY,
        }
    }

    pub fn finite(matrix: DMatrix<f64>) -> Self {
        let trace = matrix.trace();
        Self {
            matrix: Some(matrix),
            trace,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.is_some()
    }

    pub fn matrix(&self) -> Option<&DMatrix<f64>> {
        self.matrix.as_ref()
    }

    /// `+∞` when not finite.
    pub fn trace(&self) -> f64 {
        self.trace
    }
}

impl Serialize for BoundValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("BoundValue", 3)?;
        st.serialize_field("finite", &self.is_finite())?;
        if self.is_finite() {
            st.serialize_field("trace", &self.trace)?;
        } else {
            st.serialize_field("trace", &format_extended(self.trace))?;
        }
        st.serialize_field("matrix", &self.matrix.as_ref().map(rows))?;
        st.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalRates {
    pub p_lower: f64,
    pub p_upper: f64,
    /// `p_lower` and `p_upper` agree within the bisection resolution, so
    /// `p_c = p_lower`.
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecrecyInterval {
    /// `+∞` when `p1 = 0`.
    #[serde(serialize_with = "crate::serde_ext::serialize_extended")]
    pub lower_exclusive: f64,
    pub upper_inclusive: f64,
    pub empty: bool,
    /// Built from the `p_lower`/`p_upper` bracket instead of an exact `p_c`;
    /// the true interval may be wider.
    pub conservative: bool,
    /// Whether the user error is bounded with no withholding (`p1 > p_c`).
    /// `None` when `p1` falls inside an inexact bracket.
    pub nominal_user_bounded: Option<bool>,
}

impl SecrecyInterval {
    pub fn contains(&self, p: f64) -> bool {
        !self.empty && p > self.lower_exclusive && p <= self.upper_inclusive
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Range(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// `1 − 1/ρ(A)²`.
pub fn p_lower(sys: &LinearSystem) -> Result<f64> {
    let rho = spectral_radius(sys.a())?;
    if rho <= 1.0 {
        return Err(Error::InvalidSystem(format!(
            "spectral radius must exceed 1, got {rho}"
        )));
    }
    Ok(1.0 - 1.0 / (rho * rho))
}

/// Lower bound on the eavesdropper's asymptotic error.
pub fn solve_s(p: f64, ch: &ChannelParams, sys: &LinearSystem) -> Result<BoundValue> {
    check_unit("p", p)?;
    let rate = p * ch.p2;
    if rate <= p_lower(sys)? {
        return Ok(BoundValue::infinite());
    }
    match solve_discounted_lyapunov(sys.a(), sys.q(), 1.0 - rate) {
        Ok(s) => Ok(BoundValue::finite(s)),
        Err(Error::NoSolution(_)) => Ok(BoundValue::infinite()),
        Err(e) => Err(e),
    }
}

/// Builds `L_K` from the gain of `x` and returns its fixed point when that
/// fixed point is positive semidefinite.
fn gain_certificate(x: &DMatrix<f64>, sys: &LinearSystem, lambda: f64) -> Option<DMatrix<f64>> {
    let (a, c) = (sys.a(), sys.c());
    let s = symmetrize(&(c * x * c.transpose() + sys.r()));
    let chol = s.cholesky()?;
    let k = chol.solve(&(c * x * a.transpose())).transpose();
    let f = a - &k * c;
    let op = a.kronecker(a) * (1.0 - lambda) + f.kronecker(&f) * lambda;
    let rhs = sys.q() + &k * sys.r() * k.transpose() * lambda;
    let cand = symmetrize(&solve_vectorized(&op, &rhs).ok()?);
    let scale = max_abs(&cand);
    if !scale.is_finite() || min_sym_eigenvalue(&cand) <= 1e-12 * scale {
        return None;
    }
    let gap = &cand - riccati_map(&cand, sys, lambda).ok()?;
    (min_sym_eigenvalue(&gap) >= -1e-9 * (1.0 + scale)).then_some(cand)
}

/// Decides whether some `X ⪰ 0` satisfies `X ⪰ g_λ(X)`.
///
/// Iterates `X ← g_λ(X)` from `Σ0`. Returns `true` on convergence or when a
/// gain certificate is found, `false` once `Tr X` exceeds `div_threshold`
/// (or immediately when `λ ≤ p_lower`), and [`Error::Inconclusive`]
/// otherwise.
pub fn feasibility_check(lambda: f64, sys: &LinearSystem, max_iters: usize, div_threshold: f64) -> Result<bool> {
    check_unit("lambda", lambda)?;
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    if !(div_threshold > 0.0) {
        return Err(Error::InvalidArgument("div_threshold must be positive".into()));
    }
    let rho = spectral_radius(sys.a())?;
    if rho > 1.0 && lambda <= 1.0 - 1.0 / (rho * rho) {
        return Ok(false);
    }
    let mut x = sys.sigma0().clone();
    for k in 1..=max_iters {
        let next = riccati_map(&x, sys, lambda)?;
        let tr = next.trace();
        if !tr.is_finite() || tr > div_threshold {
            return Ok(false);
        }
        if max_abs(&(&next - &x)) <= 1e-9 * (1.0 + max_abs(&x)) {
            return Ok(true);
        }
        if k % CERTIFICATE_EVERY == 0 && gain_certificate(&next, sys, lambda).is_some() {
            return Ok(true);
        }
        x = next;
    }
    Err(Error::Inconclusive {
        lambda,
        iterations: max_iters,
    })
}

fn default_div_threshold(sys: &LinearSystem) -> f64 {
    DEFAULT_DIVERGENCE_FACTOR * sys.sigma0().trace()
}

/// Bisection for `p_upper` on `[p_lower, 1]`; returns the feasible end of
/// the final bracket. Inconclusive probes count as infeasible, which can
/// only move the estimate up.
pub fn p_upper(sys: &LinearSystem, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
    }
    let mut lo = p_lower(sys)?;
    let mut hi = 1.0;
    let div = default_div_threshold(sys);
    match feasibility_check(hi, sys, DEFAULT_FEASIBILITY_MAX_ITERS, div) {
        Ok(true) => {}
        Ok(false) => {
            return Err(Error::NoSolution(
                "modified Riccati map has no fixed point at lambda = 1; (A, C) is not detectable".into(),
            ))
        }
        Err(Error::Inconclusive { .. }) => return Err(Error::BracketInconclusive { lower: lo, upper: hi }),
        Err(e) => return Err(e),
    }
    let mut conclusive = false;
    let mut probes = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        probes += 1;
        match feasibility_check(mid, sys, DEFAULT_FEASIBILITY_MAX_ITERS, div) {
            Ok(true) => {
                hi = mid;
                conclusive = true;
            }
            Ok(false) => {
                lo = mid;
                conclusive = true;
            }
            Err(Error::Inconclusive { .. }) => lo = mid,
            Err(e) => return Err(e),
        }
    }
    if probes > 0 && !conclusive {
        return Err(Error::BracketInconclusive { lower: lo, upper: hi });
    }
    Ok(hi)
}

/// `p_lower` and `p_upper` together, with exactness detection at ten times
/// the bisection tolerance.
pub fn critical_rates(sys: &LinearSystem, tol: f64) -> Result<CriticalRates> {
    let pl = p_lower(sys)?;
    let pu = p_upper(sys, tol)?;
    Ok(CriticalRates {
        p_lower: pl,
        p_upper: pu,
        exact: (pu - pl).abs() <= 10.0 * tol,
    })
}

/// Stabilizing fixed point of `g_λ`.
///
/// Plain iteration from `Σ0` until either the relative change drops below
/// `tol` or a gain certificate appears, then policy iteration on `L_K`
/// (quadratically convergent) to polish.
pub fn modified_riccati_fixed_point(
    sys: &LinearSystem,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<DMatrix<f64>> {
    check_unit("lambda", lambda)?;
    let mut x = sys.sigma0().clone();
    let mut last_change = f64::INFINITY;
    let mut seeded = false;
    for k in 1..=max_iters {
        let next = riccati_map(&x, sys, lambda)?;
        let scale = max_abs(&next);
        if !scale.is_finite() {
            break;
        }
        last_change = max_abs(&(&next - &x)) / scale.max(f64::MIN_POSITIVE);
        x = next;
        if last_change <= tol {
            seeded = true;
            break;
        }
        if k % CERTIFICATE_EVERY == 0 {
            if let Some(cert) = gain_certificate(&x, sys, lambda) {
                x = cert;
                seeded = true;
                break;
            }
        }
    }
    if !seeded {
        return Err(Error::NonConvergence {
            iterations: max_iters,
            last_change,
            trace: x.trace(),
        });
    }

    let mut prev_change = f64::INFINITY;
    for _ in 0..MAX_POLICY_STEPS {
        let Some(next) = gain_certificate(&x, sys, lambda) else {
            break;
        };
        let change = max_abs(&(&next - &x)) / max_abs(&next).max(f64::MIN_POSITIVE);
        x = next;
        if change <= 4.0 * f64::EPSILON || change >= prev_change {
            break;
        }
        prev_change = change;
    }

    let residual = max_abs(&(&x - riccati_map(&x, sys, lambda)?));
    if residual > tol * max_abs(&x) {
        return Err(Error::NonConvergence {
            iterations: max_iters,
            last_change: residual / max_abs(&x),
            trace: x.trace(),
        });
    }
    Ok(x)
}

/// Upper bound on the user's asymptotic error given precomputed rates.
pub fn solve_v_with_rates(
    p: f64,
    ch: &ChannelParams,
    sys: &LinearSystem,
    rates: &CriticalRates,
    tol: f64,
    max_iters: usize,
) -> Result<BoundValue> {
    check_unit("p", p)?;
    let rate = p * ch.p1;
    if rate <= rates.p_upper {
        return Ok(BoundValue::infinite());
    }
    Ok(BoundValue::finite(modified_riccati_fixed_point(sys, rate, tol, max_iters)?))
}

/// Upper bound on the user's asymptotic error.
pub fn solve_v(p: f64, ch: &ChannelParams, sys: &LinearSystem, tol: f64, max_iters: usize) -> Result<BoundValue> {
    check_unit("p", p)?;
    let rates = critical_rates(sys, DEFAULT_P_UPPER_TOL)?;
    solve_v_with_rates(p, ch, sys, &rates, tol, max_iters)
}

/// Perfect-secrecy interval from known critical rates.
pub fn secrecy_interval_from_rates(rates: &CriticalRates, ch: &ChannelParams) -> SecrecyInterval {
    let (lower_rate, upper_rate) = if rates.exact {
        (rates.p_lower, rates.p_lower)
    } else {
        (rates.p_upper, rates.p_lower)
    };
    let lower_exclusive = if ch.p1 > 0.0 { lower_rate / ch.p1 } else { f64::INFINITY };
    let upper_inclusive = if ch.p2 > 0.0 {
        (upper_rate / ch.p2).min(1.0)
    } else {
        1.0
    };
    let nominal_user_bounded = if rates.exact {
        Some(ch.p1 > rates.p_lower)
    } else if ch.p1 > rates.p_upper {
        Some(true)
    } else if ch.p1 <= rates.p_lower {
        Some(false)
    } else {
        None
    };
    SecrecyInterval {
        lower_exclusive,
        upper_inclusive,
        empty: lower_exclusive >= upper_inclusive,
        conservative: !rates.exact,
        nominal_user_bounded,
    }
}

/// Withholding probabilities that keep the user bounded while the
/// eavesdropper diverges.
pub fn secrecy_interval(sys: &LinearSystem, ch: &ChannelParams) -> Result<SecrecyInterval> {
    let rates = critical_rates(sys, DEFAULT_P_UPPER_TOL)?;
    Ok(secrecy_interval_from_rates(&rates, ch))
}
