//! Withholding mechanism, erasure channels, and seeded random streams.
//!
//! Every random quantity in a simulation is drawn from its own stream, all
//! derived from one master seed:
//!
//! | stream id | use                               |
//! |-----------|-----------------------------------|
//! | 0         | process noise (and initial state) |
//! | 1         | measurement noise                 |
//! | 2         | mechanism coin                    |
//! | 3         | user erasures                     |
//! | 4         | eavesdropper erasures             |
//! | 5 + k     | Monte Carlo run `k`               |
//!
//! Streams are ChaCha8 keystreams selected by `(seed, stream_id)`, so the
//! draws do not depend on platform or thread count.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const STREAM_PROCESS_NOISE: u64 = 0;
pub const STREAM_MEASUREMENT_NOISE: u64 = 1;
pub const STREAM_MECHANISM: u64 = 2;
pub const STREAM_USER_ERASURE: u64 = 3;
pub const STREAM_EAVESDROPPER_ERASURE: u64 = 4;
pub const STREAM_RUN_BASE: u64 = 5;

fn check_probability(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Range(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// Reception probability of the user (`p1`) and interception probability
/// of the eavesdropper (`p2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub p1: f64,
    pub p2: f64,
}

impl ChannelParams {
    pub fn new(p1: f64, p2: f64) -> Result<Self> {
        check_probability("p1", p1)?;
        check_probability("p2", p2)?;
        Ok(Self { p1, p2 })
    }
}

/// Transmit-with-probability-`p` coin at the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub p: f64,
}

impl Mechanism {
    pub fn new(p: f64) -> Result<Self> {
        check_probability("p", p)?;
        Ok(Self { p })
    }

    /// Always transmit.
    pub fn transparent() -> Self {
        Self { p: 1.0 }
    }
}

/// One independent, reproducible random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    /// Stream for Monte Carlo run `k`.
    pub fn for_run(seed: u64, run: u64) -> Self {
        Self::new(seed, STREAM_RUN_BASE + run)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// True with probability `rate`.
    pub fn bernoulli(&mut self, rate: f64) -> bool {
        self.uniform() < rate
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(rand_distr::StandardNormal)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Sensor coin: true means `y(k)` is transmitted.
pub fn mechanism_draw(mech: &Mechanism, rng: &mut RngStream) -> bool {
    rng.bernoulli(mech.p)
}

/// Erasure channel: true means the packet is delivered (or intercepted).
pub fn erasure_draw(rate: f64, rng: &mut RngStream) -> bool {
    rng.bernoulli(rate)
}

/// Effective reception rates `(p·p1, p·p2)` after withholding and erasure.
pub fn effective_rates(mech: &Mechanism, ch: &ChannelParams) -> (f64, f64) {
    (mech.p * ch.p1, mech.p * ch.p2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mean(draws: impl Iterator<Item = bool>) -> f64 {
        let (mut hits, mut total) = (0u64, 0u64);
        for d in draws {
            hits += d as u64;
            total += 1;
        }
        hits as f64 / total as f64
    }

    #[test]
    fn degenerate_mechanisms() {
        let mut rng = RngStream::new(7, STREAM_MECHANISM);
        assert!((0..1000).all(|_| mechanism_draw(&Mechanism::new(1.0).unwrap(), &mut rng)));
        assert!((0..1000).all(|_| !mechanism_draw(&Mechanism::new(0.0).unwrap(), &mut rng)));
        assert!((0..1000).all(|_| erasure_draw(1.0, &mut rng)));
        assert!((0..1000).all(|_| !erasure_draw(0.0, &mut rng)));
    }

    #[test]
    fn mechanism_rate() {
        let mech = Mechanism::new(0.51).unwrap();
        let mut rng = RngStream::new(42, STREAM_MECHANISM);
        let m = mean((0..1_000_000).map(|_| mechanism_draw(&mech, &mut rng)));
        assert!((m - 0.51).abs() <= 0.002, "{m}");
    }

    #[test]
    fn erasure_rate() {
        let mut rng = RngStream::new(42, STREAM_USER_ERASURE);
        let m = mean((0..1_000_000).map(|_| erasure_draw(0.9, &mut rng)));
        assert!((m - 0.9).abs() <= 0.001, "{m}");
    }

    #[test]
    fn effective_rate_examples() {
        let ch = ChannelParams::new(0.9, 0.6).unwrap();
        let (a, b) = effective_rates(&Mechanism::new(0.51).unwrap(), &ch);
        assert_relative_eq!(a, 0.459, epsilon = 1e-12);
        assert_relative_eq!(b, 0.306, epsilon = 1e-12);
        assert_eq!(effective_rates(&Mechanism::transparent(), &ch), (0.9, 0.6));
        assert_eq!(effective_rates(&Mechanism::new(0.0).unwrap(), &ch), (0.0, 0.0));
    }

    #[test]
    fn range_checks() {
        assert!(matches!(ChannelParams::new(1.5, 0.5), Err(Error::Range(_))));
        assert!(ChannelParams::new(0.5, -0.1).is_err());
        assert!(Mechanism::new(f64::NAN).is_err());
    }

    fn correlation(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn streams_are_independent_and_gamma_rates_match() {
        let steps = 100_000;
        let mech = Mechanism::new(0.51).unwrap();
        let ch = ChannelParams::new(0.9, 0.6).unwrap();
        let mut s_mech = RngStream::new(3, STREAM_MECHANISM);
        let mut s_user = RngStream::new(3, STREAM_USER_ERASURE);
        let mut s_eve = RngStream::new(3, STREAM_EAVESDROPPER_ERASURE);
        let (mut sent, mut e1, mut e2) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..steps {
            sent.push(mechanism_draw(&mech, &mut s_mech) as u8 as f64);
            e1.push(erasure_draw(ch.p1, &mut s_user) as u8 as f64);
            e2.push(erasure_draw(ch.p2, &mut s_eve) as u8 as f64);
        }
        assert!(correlation(&sent, &e1).abs() < 0.01);
        assert!(correlation(&sent, &e2).abs() < 0.01);
        assert!(correlation(&e1, &e2).abs() < 0.01);

        let (r1, r2) = effective_rates(&mech, &ch);
        for (e, rate) in [(&e1, r1), (&e2, r2)] {
            let hits: f64 = sent.iter().zip(e.iter()).map(|(s, x)| s * x).sum();
            let emp = hits / steps as f64;
            let sigma = (rate * (1.0 - rate) / steps as f64).sqrt();
            assert!((emp - rate).abs() <= 3.0 * sigma, "{emp} vs {rate}");
        }
    }

    #[test]
    fn reproducible() {
        let draw = |seed, id| {
            let mut s = RngStream::new(seed, id);
            (0..64).map(|_| s.next_u64()).collect::<Vec<_>>()
        };
        assert_eq!(draw(11, 2), draw(11, 2));
        assert_ne!(draw(11, 2), draw(11, 3));
        assert_ne!(draw(11, 2), draw(12, 2));
    }
}
