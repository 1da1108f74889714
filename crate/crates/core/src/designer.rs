//! Choosing the transmission probability `p`.
//!
//! The relaxed design problem is
//!
//! ```text
//! minimize Tr V(p)  subject to  Tr S(p) ≥ M,  p ∈ [0, 1]
//! ```
//!
//! Both traces are non-increasing in `p`, so the optimum is the largest `p`
//! that still meets the secrecy floor, `p* = max{p : Tr S(p) ≥ M}`. It is
//! found by bisection on `[0, 1]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{
    critical_rates, p_lower, secrecy_interval_from_rates, solve_s, solve_v_with_rates, CriticalRates,
    SecrecyInterval, DEFAULT_FIXED_POINT_MAX_ITERS, DEFAULT_FIXED_POINT_TOL, DEFAULT_P_UPPER_TOL,
};
use crate::channel::ChannelParams;
use crate::linmodel::{solve_discounted_lyapunov, LinearSystem};
use crate::serde_ext::serialize_extended;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignResult {
    pub p_star: f64,
    #[serde(rename = "trS", serialize_with = "serialize_extended")]
    pub tr_s: f64,
    #[serde(rename = "trV", serialize_with = "serialize_extended")]
    pub tr_v: f64,
    #[serde(rename = "M")]
    pub secrecy_floor: f64,
    pub epsilon: f64,
    /// Bisection steps taken; zero when the floor is already met at `p = 1`.
    pub iterations: usize,
    pub rates: CriticalRates,
    pub interval: SecrecyInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffEvaluation {
    #[serde(flatten)]
    pub design: DesignResult,
    /// False when `Tr V(p*)` is infinite: the user error is not guaranteed
    /// bounded at this secrecy level.
    pub user_error_bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    #[serde(rename = "M")]
    pub secrecy_floor: f64,
    pub p_star: f64,
    #[serde(rename = "trS", serialize_with = "serialize_extended")]
    pub tr_s: f64,
    #[serde(rename = "trV", serialize_with = "serialize_extended")]
    pub tr_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffCurve {
    pub points: Vec<TradeoffPoint>,
    pub channel: ChannelParams,
}

/// Result of the bare bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisection {
    pub p_star: f64,
    pub iterations: usize,
}

fn trace_s(p: f64, p2: f64, p_l: f64, sys: &LinearSystem) -> Result<f64> {
    let rate = p * p2;
    if rate <= p_l {
        return Ok(f64::INFINITY);
    }
    match solve_discounted_lyapunov(sys.a(), sys.q(), 1.0 - rate) {
        Ok(s) => Ok(s.trace()),
        Err(Error::NoSolution(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Bisection on `p ∈ [0, 1]` for the largest `p` with `Tr S(p) ≥ m`.
///
/// Returns the lower end of the final bracket, which always satisfies the
/// constraint. When `Tr S(1) ≥ m` the answer is `1` and no bisection runs.
pub fn bisect_p_star(sys: &LinearSystem, ch: &ChannelParams, m: f64, epsilon: f64) -> Result<Bisection> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::InvalidArgument(format!("secrecy floor M must be positive and finite, got {m}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let p_l = p_lower(sys)?;
    if trace_s(1.0, ch.p2, p_l, sys)? >= m {
        return Ok(Bisection { p_star: 1.0, iterations: 0 });
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut iterations = 0;
    while hi - lo >= epsilon {
        let mid = 0.5 * (lo + hi);
        if trace_s(mid, ch.p2, p_l, sys)? < m {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Ok(Bisection { p_star: lo, iterations })
}

/// Designer bound to one plant and channel; critical rates are computed
/// once.
#[derive(Debug, Clone)]
pub struct Designer<'a> {
    sys: &'a LinearSystem,
    channel: ChannelParams,
    rates: CriticalRates,
}

impl<'a> Designer<'a> {
    pub fn new(sys: &'a LinearSystem, channel: ChannelParams) -> Result<Self> {
        let rates = critical_rates(sys, DEFAULT_P_UPPER_TOL)?;
        Ok(Self { sys, channel, rates })
    }

    pub fn rates(&self) -> &CriticalRates {
        &self.rates
    }

    pub fn design(&self, m: f64, epsilon: f64) -> Result<DesignResult> {
        let Bisection { p_star, iterations } = bisect_p_star(self.sys, &self.channel, m, epsilon)?;
        let tr_s = solve_s(p_star, &self.channel, self.sys)?.trace();
        let tr_v = solve_v_with_rates(
            p_star,
            &self.channel,
            self.sys,
            &self.rates,
            DEFAULT_FIXED_POINT_TOL,
            DEFAULT_FIXED_POINT_MAX_ITERS,
        )?
        .trace();
        Ok(DesignResult {
            p_star,
            tr_s,
            tr_v,
            secrecy_floor: m,
            epsilon,
            iterations,
            rates: self.rates,
            interval: secrecy_interval_from_rates(&self.rates, &self.channel),
        })
    }

    pub fn evaluate(&self, m: f64, epsilon: f64) -> Result<TradeoffEvaluation> {
        let design = self.design(m, epsilon)?;
        let user_error_bounded = design.tr_v.is_finite();
        Ok(TradeoffEvaluation { design, user_error_bounded })
    }

    pub fn sweep(&self, grid: &[f64], epsilon: f64) -> Result<TradeoffCurve> {
        if grid.is_empty() {
            return Err(Error::InvalidArgument("M grid must be non-empty".into()));
        }
        if grid.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("M grid values must be positive and finite".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("M grid must be strictly increasing".into()));
        }
        let points = grid
            .par_iter()
            .map(|&m| {
                self.design(m, epsilon).map(|d| TradeoffPoint {
                    secrecy_floor: m,
                    p_star: d.p_star,
                    tr_s: d.tr_s,
                    tr_v: d.tr_v,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        check_curve(&points)?;
        Ok(TradeoffCurve { points, channel: self.channel })
    }
}

fn check_curve(points: &[TradeoffPoint]) -> Result<()> {
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.p_star > a.p_star {
            return Err(Error::Consistency(format!(
                "p* increased from {} to {} between M = {} and M = {}",
                a.p_star, b.p_star, a.secrecy_floor, b.secrecy_floor
            )));
        }
        let slack = 1e-9 * a.tr_v.abs();
        if a.tr_v.is_infinite() && b.tr_v.is_finite() || b.tr_v < a.tr_v - slack {
            return Err(Error::Consistency(format!(
                "Tr V decreased from {} to {} between M = {} and M = {}",
                a.tr_v, b.tr_v, a.secrecy_floor, b.secrecy_floor
            )));
        }
    }
    Ok(())
}

/// Optimal withholding probability for secrecy floor `m`, with both bounds
/// evaluated there.
pub fn design_p_star(sys: &LinearSystem, ch: &ChannelParams, m: f64, epsilon: f64) -> Result<DesignResult> {
    Designer::new(sys, *ch)?.design(m, epsilon)
}

pub fn evaluate_tradeoff(sys: &LinearSystem, ch: &ChannelParams, m: f64, epsilon: f64) -> Result<TradeoffEvaluation> {
    Designer::new(sys, *ch)?.evaluate(m, epsilon)
}

/// One design per secrecy floor in `grid` (strictly increasing).
pub fn sweep_tradeoff(sys: &LinearSystem, ch: &ChannelParams, grid: &[f64], epsilon: f64) -> Result<TradeoffCurve> {
    Designer::new(sys, *ch)?.sweep(grid, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(a: f64) -> LinearSystem {
        LinearSystem::scalar(a, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn ch(p1: f64, p2: f64) -> ChannelParams {
        ChannelParams::new(p1, p2).unwrap()
    }

    #[test]
    fn p_star_at_m_10() {
        let d = design_p_star(&scalar(1.2), &ch(0.9, 0.7), 10.0, 1e-6).unwrap();
        assert_relative_eq!(d.p_star, 0.535714, epsilon = 1e-6);
        assert_relative_eq!(d.tr_s, 10.0, epsilon = 1e-4);
        assert!(d.tr_s >= 10.0);
        assert_relative_eq!(d.tr_v, 6.2883, epsilon = 1e-3);
        assert!(d.iterations <= 21);
    }

    #[test]
    fn inactive_constraint() {
        let d = design_p_star(&scalar(1.2), &ch(0.9, 0.7), 0.5, 1e-6).unwrap();
        assert_eq!(d.p_star, 1.0);
        assert_eq!(d.iterations, 0);
        let v1 = crate::scalar::scalar_v(0.9, &crate::scalar::ScalarSystem::new(1.2, 1.0, 1.0, 1.0).unwrap());
        assert_relative_eq!(d.tr_v, v1, epsilon = 1e-8);
    }

    #[test]
    fn large_floor_approaches_critical_ratio() {
        let d = design_p_star(&scalar(1.2), &ch(0.9, 0.7), 1e9, 1e-6).unwrap();
        assert_relative_eq!(d.p_star, 0.436508, epsilon = 1e-3);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            design_p_star(&scalar(1.2), &ch(0.9, 0.7), 0.0, 1e-6),
            Err(Error::InvalidArgument(_))
        ));
        assert!(design_p_star(&scalar(1.2), &ch(0.9, 0.7), 10.0, 0.0).is_err());
        assert!(sweep_tradeoff(&scalar(1.2), &ch(0.9, 0.7), &[5.0, 2.0], 1e-6).is_err());
        assert!(sweep_tradeoff(&scalar(1.2), &ch(0.9, 0.7), &[], 1e-6).is_err());
    }

    #[test]
    fn equal_channels_lose_user_bound_at_extreme_floor() {
        // p* sits within ε of p_c/p2, so p*·p1 cannot clear p_upper.
        let e = evaluate_tradeoff(&scalar(1.2), &ch(0.7, 0.7), 1e12, 1e-6).unwrap();
        assert!(e.design.p_star * 0.7 <= e.design.rates.p_upper);
        assert!(e.design.tr_v.is_infinite());
        assert!(!e.user_error_bounded);
    }

    #[test]
    fn sweep_is_monotone() {
        let curve = sweep_tradeoff(&scalar(1.2), &ch(0.9, 0.7), &[2.0, 5.0, 10.0, 20.0, 50.0], 1e-6).unwrap();
        assert_eq!(curve.points.len(), 5);
        for w in curve.points.windows(2) {
            assert!(w[1].tr_v >= w[0].tr_v);
            assert!(w[1].p_star <= w[0].p_star);
        }
    }

    #[test]
    fn higher_ratio_helps_user() {
        let grid = [2.0, 5.0, 10.0, 20.0, 50.0];
        let better = sweep_tradeoff(&scalar(1.2), &ch(0.9, 0.6), &grid, 1e-6).unwrap();
        let worse = sweep_tradeoff(&scalar(1.2), &ch(0.9, 0.7), &grid, 1e-6).unwrap();
        for (b, w) in better.points.iter().zip(&worse.points) {
            assert!(b.tr_v < w.tr_v, "M={}: {} vs {}", b.secrecy_floor, b.tr_v, w.tr_v);
        }
    }

    #[test]
    fn curve_consistency_check() {
        let pt = |m: f64, p: f64, v: f64| TradeoffPoint { secrecy_floor: m, p_star: p, tr_s: m, tr_v: v };
        assert!(check_curve(&[pt(1.0, 0.9, 2.0), pt(2.0, 0.8, 3.0)]).is_ok());
        assert!(check_curve(&[pt(1.0, 0.8, 2.0), pt(2.0, 0.9, 3.0)]).is_err());
        assert!(check_curve(&[pt(1.0, 0.9, 3.0), pt(2.0, 0.8, 2.0)]).is_err());
        assert!(check_curve(&[pt(1.0, 0.9, f64::INFINITY), pt(2.0, 0.8, 2.0)]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bisection_matches_grid_search(
            a in 1.05f64..2.5,
            p2 in 0.05f64..1.0,
            log_m in 0.0f64..3.0,
            eps_exp in 3i32..9,
        ) {
            let sys = scalar(a);
            let channel = ch(1.0, p2);
            let m = 10f64.powf(log_m);
            let eps = 10f64.powi(-eps_exp);
            let b = bisect_p_star(&sys, &channel, m, eps).unwrap();
            prop_assert!(b.iterations as f64 <= (-eps.log2()).ceil() + 1.0);

            let ts = solve_s(b.p_star, &channel, &sys).unwrap().trace();
            prop_assert!(ts >= m - 1e-6 * m);

            let best = (0..=10_000)
                .map(|i| i as f64 * 1e-4)
                .filter(|p| solve_s(*p, &channel, &sys).unwrap().trace() >= m)
                .fold(0.0, f64::max);
            prop_assert!((b.p_star - best).abs() <= eps + 1e-4, "{} vs {}", b.p_star, best);
        }
    }
}
