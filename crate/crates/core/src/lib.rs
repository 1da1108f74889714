//! Packet-withholding secrecy for remote state estimation.
//!
//! A sensor observing an unstable linear plant transmits each measurement
//! with probability `p` over a two-output erasure channel: the legitimate
//! user receives a transmitted packet with probability `p1`, an eavesdropper
//! intercepts it with probability `p2`. Both run an intermittent Kalman
//! filter. Choosing `p` trades the user's estimation quality against the
//! eavesdropper's.
//!
//! The crate provides:
//!
//! - [`linmodel`]: plant description, validation, and the linear-algebra
//!   primitives (spectral radius, discounted Lyapunov solve).
//! - [`channel`]: the Bernoulli withholding mechanism, erasure draws and
//!   reproducible random streams.
//! - [`filter`]: the intermittent Kalman recursion and the modified Riccati
//!   map `g_λ`.
//! - [`bounds`]: critical rates, the eavesdropper lower bound `S(p)`, the user
//!   upper bound `V(p)` and the perfect-secrecy interval.
//! - [`designer`]: bisection for the optimal withholding probability and
//!   secrecy/utility sweeps.
//! - [`scalar`]: closed forms for scalar plants.
//! - [`montecarlo`]: trajectory simulation and expected-error estimation.
//! - [`config`] and [`export`]: JSON configuration and CSV output.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod channel;
pub mod config;
pub mod designer;
mod error;
pub mod export;
pub mod filter;
pub mod linmodel;
pub mod montecarlo;
pub mod scalar;
pub mod serde_ext;

pub use error::{Error, Result};
pub use linmodel::LinearSystem;
