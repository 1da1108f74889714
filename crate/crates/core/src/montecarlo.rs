//! Trajectory simulation and expected-error estimation.
//!
//! [`simulate_trace`] runs the plant, the withholding coin, both erasure
//! channels and both intermittent filters side by side. Every random source
//! has its own stream (see [`crate::channel`]), and all of them are drawn at
//! every step whether or not the draw is used. Two traces with the same seed
//! but different `p` therefore share the same noise and erasure samples; the
//! coin compares the same uniform against `p`, so a smaller `p` withholds a
//! superset of the packets.
//!
//! [`expected_error_curve`] estimates `Tr E[P(k)]` for a receiver whose
//! packets arrive i.i.d. with probability `rate`. With `P(k) = g_γ(P(k−1))`
//! and `γ` independent of `P(k−1)`,
//!
//! ```text
//! E P(k) = rate · E[g_1(P(k−1))] + (1 − rate) · (A E[P(k−1)] Aᵀ + Q)
//! ```
//!
//! because the open-loop map is affine. Only the first expectation is
//! sampled; `g_1` is bounded, so its sample mean is well behaved, whereas
//! the plain sample mean of `Tr P(k)` is dominated by rare long loss
//! streaks and badly underestimates the mean when it grows without bound.
//! The plain sample mean is reported alongside for comparison.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    effective_rates, erasure_draw, mechanism_draw, ChannelParams, Mechanism, RngStream,
    STREAM_EAVESDROPPER_ERASURE, STREAM_MEASUREMENT_NOISE, STREAM_MECHANISM, STREAM_PROCESS_NOISE,
    STREAM_USER_ERASURE,
};
use crate::filter::{filter_step, riccati_map, FilterState, ReceptionFlag};
use crate::linmodel::LinearSystem;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Receiver {
    User,
    Eavesdropper,
}

impl Receiver {
    /// Effective packet rate seen by this receiver.
    pub fn rate(self, mech: &Mechanism, ch: &ChannelParams) -> f64 {
        let (r1, r2) = effective_rates(mech, ch);
        match self {
            Receiver::User => r1,
            Receiver::Eavesdropper => r2,
        }
    }
}

/// One time step of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub sent: bool,
    pub gamma1: bool,
    pub gamma2: bool,
    /// Predictions of `x(k)` from the packets received before `k`.
    pub xhat1: DVector<f64>,
    pub xhat2: DVector<f64>,
    pub tr_p1: f64,
    pub tr_p2: f64,
    /// `‖xhat_i(k) − x(k)‖₂`.
    pub err1: f64,
    pub err2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub records: Vec<TraceRecord>,
    pub seed: u64,
    pub p: f64,
    pub channel: ChannelParams,
}

impl SimulationTrace {
    pub fn gammas(&self, receiver: Receiver) -> Vec<bool> {
        self.records
            .iter()
            .map(|r| match receiver {
                Receiver::User => r.gamma1,
                Receiver::Eavesdropper => r.gamma2,
            })
            .collect()
    }

    pub fn tr_p(&self, receiver: Receiver) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| match receiver {
                Receiver::User => r.tr_p1,
                Receiver::Eavesdropper => r.tr_p2,
            })
            .collect()
    }

    pub fn errors(&self, receiver: Receiver) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| match receiver {
                Receiver::User => r.err1,
                Receiver::Eavesdropper => r.err2,
            })
            .collect()
    }
}

fn cholesky_factor(x: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    x.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::InvalidSystem(format!("{name} is not positive definite")))
}

fn gaussian(l: &DMatrix<f64>, rng: &mut RngStream) -> DVector<f64> {
    let z = DVector::from_fn(l.nrows(), |_, _| rng.standard_normal());
    l * z
}

/// Simulates `T` steps and returns the `T + 1` records `k = 0..=T`.
pub fn simulate_trace(
    sys: &LinearSystem,
    mech: &Mechanism,
    ch: &ChannelParams,
    steps: usize,
    seed: u64,
) -> Result<SimulationTrace> {
    let lq = cholesky_factor(sys.q(), "Q")?;
    let lr = cholesky_factor(sys.r(), "R")?;
    let l0 = cholesky_factor(sys.sigma0(), "Sigma0")?;

    let mut s_process = RngStream::new(seed, STREAM_PROCESS_NOISE);
    let mut s_measure = RngStream::new(seed, STREAM_MEASUREMENT_NOISE);
    let mut s_mech = RngStream::new(seed, STREAM_MECHANISM);
    let mut s_user = RngStream::new(seed, STREAM_USER_ERASURE);
    let mut s_eve = RngStream::new(seed, STREAM_EAVESDROPPER_ERASURE);

    let mut x = gaussian(&l0, &mut s_process);
    let mut user = FilterState::initial(sys);
    let mut eve = FilterState::initial(sys);
    let mut records = Vec::with_capacity(steps + 1);

    for k in 0..=steps {
        let y = sys.c() * &x + gaussian(&lr, &mut s_measure);
        let sent = mechanism_draw(mech, &mut s_mech);
        let gamma1 = erasure_draw(ch.p1, &mut s_user) && sent;
        let gamma2 = erasure_draw(ch.p2, &mut s_eve) && sent;
        let w = gaussian(&lq, &mut s_process);

        records.push(TraceRecord {
            k,
            x: x.clone(),
            y: y.clone(),
            sent,
            gamma1,
            gamma2,
            xhat1: user.xhat.clone(),
            xhat2: eve.xhat.clone(),
            tr_p1: user.p.trace(),
            tr_p2: eve.p.trace(),
            err1: (&user.xhat - &x).norm(),
            err2: (&eve.xhat - &x).norm(),
        });
        if k == steps {
            break;
        }

        let flag = |g: bool| if g { ReceptionFlag::received(y.clone()) } else { ReceptionFlag::lost() };
        user = filter_step(&user, &flag(gamma1), sys)?;
        eve = filter_step(&eve, &flag(gamma2), sys)?;
        x = sys.a() * &x + w;
    }

    Ok(SimulationTrace { records, seed, p: mech.p, channel: *ch })
}

/// Independent traces, run `r` seeded from Monte Carlo stream `r`.
pub fn simulate_batch(
    sys: &LinearSystem,
    mech: &Mechanism,
    ch: &ChannelParams,
    steps: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<SimulationTrace>> {
    (0..runs)
        .into_par_iter()
        .map(|r| {
            let run_seed = RngStream::for_run(seed, r as u64).next_u64();
            simulate_trace(sys, mech, ch, steps, run_seed)
        })
        .collect()
}

/// Mean of `err_i(k)` over `k = 1..=N`.
pub fn time_average_error(trace: &SimulationTrace, receiver: Receiver) -> Result<f64> {
    let errs = trace.errors(receiver);
    if errs.len() < 2 {
        return Err(Error::InvalidArgument("time average needs at least one step after k = 0".into()));
    }
    Ok(errs[1..].iter().sum::<f64>() / (errs.len() - 1) as f64)
}

/// An interception that ends a loss streak, and what the covariance did
/// afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollapseEvent {
    pub k: usize,
    pub streak: usize,
    pub tr_p_before: f64,
    pub min_tr_p_after: f64,
}

impl CollapseEvent {
    pub fn collapsed_by(&self, factor: f64) -> bool {
        self.min_tr_p_after * factor <= self.tr_p_before
    }
}

/// Receptions at `k` preceded by at least `min_streak` consecutive losses,
/// with the smallest `Tr P` over `k+1..=k+window`. Events too close to the
/// end of the trace to see the whole window are skipped.
pub fn collapse_events(
    trace: &SimulationTrace,
    receiver: Receiver,
    min_streak: usize,
    window: usize,
) -> Vec<CollapseEvent> {
    let gammas = trace.gammas(receiver);
    let tr = trace.tr_p(receiver);
    let mut events = Vec::new();
    let mut streak = 0;
    for k in 0..gammas.len() {
        if gammas[k] {
            if streak >= min_streak && window > 0 && k + window < tr.len() {
                let min_after = tr[k + 1..=k + window].iter().copied().fold(f64::INFINITY, f64::min);
                events.push(CollapseEvent { k, streak, tr_p_before: tr[k], min_tr_p_after: min_after });
            }
            streak = 0;
        } else {
            streak += 1;
        }
    }
    events
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedErrorCurve {
    pub k: Vec<usize>,
    /// Estimate of `Tr E[P(k)]`.
    pub mean_tr_p: Vec<f64>,
    /// Plain sample mean of `Tr P(k)` across runs.
    pub sample_mean_tr_p: Vec<f64>,
    pub runs: usize,
    pub rate: f64,
    pub receiver: Option<Receiver>,
}

impl ExpectedErrorCurve {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.mean_tr_p.get(k).copied()
    }
}

struct RunSample {
    // g_1(P(k)) for k = 0..T−1
    closed_loop: Vec<DMatrix<f64>>,
    traces: Vec<f64>,
}

fn sample_run(sys: &LinearSystem, rate: f64, steps: usize, rng: &mut RngStream) -> Result<RunSample> {
    let mut p = sys.sigma0().clone();
    let mut closed_loop = Vec::with_capacity(steps);
    let mut traces = Vec::with_capacity(steps + 1);
    traces.push(p.trace());
    for _ in 0..steps {
        let g1 = riccati_map(&p, sys, 1.0)?;
        p = if rng.bernoulli(rate) { g1.clone() } else { riccati_map(&p, sys, 0.0)? };
        closed_loop.push(g1);
        traces.push(p.trace());
    }
    Ok(RunSample { closed_loop, traces })
}

/// `Tr E[P(k)]` for `k = 0..=T` at packet rate `rate`, from `runs`
/// independent reception sequences. Run `r` uses Monte Carlo stream `r`.
pub fn expected_error_curve(
    sys: &LinearSystem,
    rate: f64,
    steps: usize,
    runs: usize,
    seed: u64,
) -> Result<ExpectedErrorCurve> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Range(format!("rate must lie in [0, 1], got {rate}")));
    }
    if runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    let samples = (0..runs)
        .into_par_iter()
        .map(|r| sample_run(sys, rate, steps, &mut RngStream::for_run(seed, r as u64)))
        .collect::<Result<Vec<_>>>()?;

    let n = sys.n();
    let scale = 1.0 / runs as f64;
    let mut sample_mean = vec![0.0; steps + 1];
    let mut closed_mean = vec![DMatrix::zeros(n, n); steps];
    for s in &samples {
        for (acc, t) in sample_mean.iter_mut().zip(&s.traces) {
            *acc += t;
        }
        for (acc, g) in closed_mean.iter_mut().zip(&s.closed_loop) {
            *acc += g;
        }
    }
    sample_mean.iter_mut().for_each(|v| *v *= scale);

    let a = sys.a();
    let mut expected = sys.sigma0().clone();
    let mut mean_tr_p = Vec::with_capacity(steps + 1);
    mean_tr_p.push(expected.trace());
    for g in &closed_mean {
        let open = a * &expected * a.transpose() + sys.q();
        expected = g * (rate * scale) + open * (1.0 - rate);
        mean_tr_p.push(expected.trace());
    }

    Ok(ExpectedErrorCurve {
        k: (0..=steps).collect(),
        mean_tr_p,
        sample_mean_tr_p: sample_mean,
        runs,
        rate,
        receiver: None,
    })
}

/// [`expected_error_curve`] at the effective rate of one receiver.
pub fn receiver_error_curve(
    sys: &LinearSystem,
    mech: &Mechanism,
    ch: &ChannelParams,
    receiver: Receiver,
    steps: usize,
    runs: usize,
    seed: u64,
) -> Result<ExpectedErrorCurve> {
    let mut curve = expected_error_curve(sys, receiver.rate(mech, ch), steps, runs, seed)?;
    curve.receiver = Some(receiver);
    Ok(curve)
}

/// Finite-horizon proxies for "grows without bound" and "stays bounded".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseCriteria {
    pub divergence_ratio: f64,
    pub divergence_from: usize,
    pub divergence_to: usize,
    pub plateau_ratio: f64,
    pub plateau_from: usize,
    pub plateau_to: usize,
}

impl Default for PhaseCriteria {
    fn default() -> Self {
        Self {
            divergence_ratio: 10.0,
            divergence_from: 30,
            divergence_to: 300,
            plateau_ratio: 1.2,
            plateau_from: 150,
            plateau_to: 300,
        }
    }
}

impl PhaseCriteria {
    fn ratio(curve: &ExpectedErrorCurve, from: usize, to: usize) -> Result<f64> {
        match (curve.at(from), curve.at(to)) {
            (Some(a), Some(b)) => Ok(b / a),
            _ => Err(Error::InvalidArgument(format!(
                "curve covers k = 0..={}, criteria need k = {to}",
                curve.k.len().saturating_sub(1)
            ))),
        }
    }

    /// `mean(to) > ratio · mean(from)`.
    pub fn diverges(&self, curve: &ExpectedErrorCurve) -> Result<bool> {
        Ok(Self::ratio(curve, self.divergence_from, self.divergence_to)? > self.divergence_ratio)
    }

    /// `mean(to) ≤ ratio · mean(from)`.
    pub fn plateaus(&self, curve: &ExpectedErrorCurve) -> Result<bool> {
        Ok(Self::ratio(curve, self.plateau_from, self.plateau_to)? <= self.plateau_ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::batch_covariance_oracle;
    use approx::assert_relative_eq;

    fn scalar() -> LinearSystem {
        LinearSystem::scalar(1.2, 1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn second_order() -> LinearSystem {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.2, 1.0, 0.0, 1.1]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            q.clone(),
            DMatrix::from_element(1, 1, 1.0),
            q,
        )
        .unwrap()
    }

    fn ch(p1: f64, p2: f64) -> ChannelParams {
        ChannelParams::new(p1, p2).unwrap()
    }

    fn classical_traces(sys: &LinearSystem, steps: usize) -> Vec<f64> {
        let mut p = sys.sigma0().clone();
        let mut out = vec![p.trace()];
        for _ in 0..steps {
            p = riccati_map(&p, sys, 1.0).unwrap();
            out.push(p.trace());
        }
        out
    }

    #[test]
    fn lossless_user_is_classical() {
        let sys = second_order();
        let t = simulate_trace(&sys, &Mechanism::transparent(), &ch(1.0, 0.6), 40, 9).unwrap();
        assert_eq!(t.records.len(), 41);
        assert!(t.records.iter().all(|r| r.gamma1));
        for (got, want) in t.tr_p(Receiver::User).iter().zip(classical_traces(&sys, 40)) {
            assert_relative_eq!(*got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn no_transmission_is_open_loop() {
        let sys = second_order();
        let t = simulate_trace(&sys, &Mechanism::new(0.0).unwrap(), &ch(0.9, 0.6), 30, 1).unwrap();
        let mut p = sys.sigma0().clone();
        for r in &t.records {
            assert!(!r.sent && !r.gamma1 && !r.gamma2);
            assert_relative_eq!(r.tr_p1, p.trace(), max_relative = 1e-12);
            assert_relative_eq!(r.tr_p2, p.trace(), max_relative = 1e-12);
            p = sys.a() * &p * sys.a().transpose() + sys.q();
        }
        assert!(t.records[30].tr_p1 > 1e4);
    }

    #[test]
    fn deterministic_and_replayable() {
        let sys = second_order();
        let a = simulate_trace(&sys, &Mechanism::new(0.51).unwrap(), &ch(0.9, 0.6), 100, 5).unwrap();
        let b = simulate_trace(&sys, &Mechanism::new(0.51).unwrap(), &ch(0.9, 0.6), 100, 5).unwrap();
        assert_eq!(a, b);

        let full = simulate_trace(&sys, &Mechanism::transparent(), &ch(0.9, 0.6), 100, 5).unwrap();
        for (ra, rf) in a.records.iter().zip(&full.records) {
            assert_eq!(ra.x, rf.x);
            assert_eq!(ra.y, rf.y);
            assert!(!ra.sent || rf.sent);
            assert!(!ra.gamma1 || rf.gamma1);
        }
    }

    #[test]
    fn trace_invariants_and_oracle() {
        let sys = second_order();
        let t = simulate_trace(&sys, &Mechanism::new(0.7).unwrap(), &ch(0.9, 0.6), 60, 17).unwrap();
        for r in &t.records {
            assert!(!r.gamma1 || r.sent);
            assert!(!r.gamma2 || r.sent);
            assert!(r.tr_p1 > 0.0 && r.tr_p2 > 0.0);
        }
        for rec in [Receiver::User, Receiver::Eavesdropper] {
            let g = t.gammas(rec);
            let oracle = batch_covariance_oracle(&sys, &g[..60]).unwrap();
            for (k, p) in oracle.iter().enumerate() {
                let got = t.tr_p(rec)[k + 1];
                assert!((got - p.trace()).abs() <= 1e-8 * (1.0 + p.trace()), "k={k}");
            }
        }
    }

    #[test]
    fn zero_horizon() {
        let t = simulate_trace(&scalar(), &Mechanism::transparent(), &ch(1.0, 1.0), 0, 3).unwrap();
        assert_eq!(t.records.len(), 1);
        assert!(time_average_error(&t, Receiver::User).is_err());
    }

    #[test]
    fn time_average_matches_records() {
        let t = simulate_trace(&second_order(), &Mechanism::transparent(), &ch(1.0, 0.6), 200, 8).unwrap();
        let avg = time_average_error(&t, Receiver::User).unwrap();
        let want = t.records[1..].iter().map(|r| r.err1).sum::<f64>() / 200.0;
        assert!(avg.is_finite());
        assert_relative_eq!(avg, want, epsilon = 1e-12);

        let mut z = t.clone();
        z.records.iter_mut().for_each(|r| r.err2 = 0.0);
        assert_eq!(time_average_error(&z, Receiver::Eavesdropper).unwrap(), 0.0);
    }

    #[test]
    fn full_rate_curve_is_classical() {
        let sys = second_order();
        let c = expected_error_curve(&sys, 1.0, 50, 16, 4).unwrap();
        for ((m, s), want) in c.mean_tr_p.iter().zip(&c.sample_mean_tr_p).zip(classical_traces(&sys, 50)) {
            assert_relative_eq!(*m, want, max_relative = 1e-12);
            assert_relative_eq!(*s, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_rate_curve_is_open_loop() {
        let sys = scalar();
        let c = expected_error_curve(&sys, 0.0, 20, 3, 4).unwrap();
        let mut p = 1.0;
        for m in &c.mean_tr_p {
            assert_relative_eq!(*m, p, max_relative = 1e-12);
            p = 1.44 * p + 1.0;
        }
    }

    #[test]
    fn curve_is_deterministic() {
        let sys = scalar();
        let a = expected_error_curve(&sys, 0.4, 50, 64, 11).unwrap();
        let b = expected_error_curve(&sys, 0.4, 50, 64, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn curve_rejects_bad_arguments() {
        assert!(expected_error_curve(&scalar(), 1.2, 10, 5, 0).is_err());
        assert!(expected_error_curve(&scalar(), 0.5, 10, 0, 0).is_err());
    }

    #[test]
    fn phase_criteria() {
        let crit = PhaseCriteria::default();
        let curve = |f: fn(usize) -> f64| ExpectedErrorCurve {
            k: (0..=300).collect(),
            mean_tr_p: (0..=300).map(f).collect(),
            sample_mean_tr_p: vec![],
            runs: 1,
            rate: 0.5,
            receiver: None,
        };
        let growing = curve(|k| 1.01f64.powi(k as i32));
        assert!(crit.diverges(&growing).unwrap());
        assert!(!crit.plateaus(&growing).unwrap());
        let flat = curve(|_| 3.0);
        assert!(!crit.diverges(&flat).unwrap());
        assert!(crit.plateaus(&flat).unwrap());

        let short = expected_error_curve(&scalar(), 0.5, 100, 2, 0).unwrap();
        assert!(crit.diverges(&short).is_err());
    }

    #[test]
    fn collapse_detection() {
        let sys = second_order();
        let t = simulate_trace(&sys, &Mechanism::new(0.51).unwrap(), &ch(0.9, 0.6), 400, 21).unwrap();
        for e in collapse_events(&t, Receiver::Eavesdropper, 10, 3) {
            assert!(e.streak >= 10);
            assert!(t.records[e.k].gamma2);
            assert!(e.collapsed_by(10.0), "{e:?}");
        }
    }

    #[test]
    fn batch_runs_differ() {
        let b = simulate_batch(&scalar(), &Mechanism::new(0.5).unwrap(), &ch(0.9, 0.6), 20, 3, 2).unwrap();
        assert_eq!(b.len(), 3);
        assert_ne!(b[0].records[5].x, b[1].records[5].x);
    }
}
