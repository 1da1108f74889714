//! Intermittent Kalman filter.
//!
//! A [`FilterState`] holds the one-step-ahead prediction pair: `xhat` is the
//! estimate of `x(k)` given the packets received before `k`, and `p` is the
//! prediction error covariance `P(k)`. A step applies the measurement update
//! (when a packet arrived) and then the time update, so the covariance
//! follows `P(k+1) = g_γ(k)(P(k))` with
//!
//! ```text
//! g_λ(X) = A X Aᵀ + Q − λ A X Cᵀ (C X Cᵀ + R)⁻¹ C X Aᵀ
//! ```

use nalgebra::{DMatrix, DVector};

use crate::linmodel::{symmetrize, LinearSystem};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub xhat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub k: usize,
}

impl FilterState {
    /// Prior: `xhat(0) = 0`, `P(0) = Σ0`.
    pub fn initial(sys: &LinearSystem) -> Self {
        Self {
            xhat: DVector::zeros(sys.n()),
            p: sys.sigma0().clone(),
            k: 0,
        }
    }
}

/// What a receiver got at one step: either the measurement or nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceptionFlag {
    payload: Option<DVector<f64>>,
}

impl ReceptionFlag {
    pub fn received(y: DVector<f64>) -> Self {
        Self { payload: Some(y) }
    }

    pub fn lost() -> Self {
        Self { payload: None }
    }

    pub fn gamma(&self) -> bool {
        self.payload.is_some()
    }

    pub fn payload(&self) -> Option<&DVector<f64>> {
        self.payload.as_ref()
    }
}

fn innovation_factor(x: &DMatrix<f64>, sys: &LinearSystem) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let s = sys.c() * x * sys.c().transpose() + sys.r();
    symmetrize(&s)
        .cholesky()
        .ok_or_else(|| Error::Singular("C X Cᵀ + R is not positive definite".into()))
}

fn check_square(x: &DMatrix<f64>, sys: &LinearSystem) -> Result<()> {
    let n = sys.n();
    if x.nrows() != n || x.ncols() != n {
        return Err(Error::Dimension(format!(
            "covariance must be {n}x{n}, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

/// The modified Riccati map `g_λ(X)`.
pub fn riccati_map(x: &DMatrix<f64>, sys: &LinearSystem, lambda: f64) -> Result<DMatrix<f64>> {
    check_square(x, sys)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Range(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let a = sys.a();
    let open_loop = a * x * a.transpose() + sys.q();
    if lambda == 0.0 {
        return Ok(symmetrize(&open_loop));
    }
    let chol = innovation_factor(x, sys)?;
    let cxa = sys.c() * x * a.transpose();
    let correction = cxa.transpose() * chol.solve(&cxa);
    Ok(symmetrize(&(open_loop - correction * lambda)))
}

/// `K = P Cᵀ (C P Cᵀ + R)⁻¹`.
pub fn kalman_gain(p: &DMatrix<f64>, sys: &LinearSystem) -> Result<DMatrix<f64>> {
    check_square(p, sys)?;
    let chol = innovation_factor(p, sys)?;
    // S is symmetric, so Kᵀ = S⁻¹ C P.
    Ok(chol.solve(&(sys.c() * p)).transpose())
}

/// Advances one receiver by one step.
pub fn filter_step(state: &FilterState, flag: &ReceptionFlag, sys: &LinearSystem) -> Result<FilterState> {
    check_square(&state.p, sys)?;
    if state.xhat.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "estimate must have length {}, got {}",
            sys.n(),
            state.xhat.len()
        )));
    }
    let (xhat, p) = match flag.payload() {
        Some(y) => {
            if y.len() != sys.m() {
                return Err(Error::Dimension(format!(
                    "measurement must have length {}, got {}",
                    sys.m(),
                    y.len()
                )));
            }
            let gain = kalman_gain(&state.p, sys)?;
            let innovation = y - sys.c() * &state.xhat;
            let filtered = &state.xhat + gain * innovation;
            (sys.a() * filtered, riccati_map(&state.p, sys, 1.0)?)
        }
        None => (sys.a() * &state.xhat, riccati_map(&state.p, sys, 0.0)?),
    };
    Ok(FilterState { xhat, p, k: state.k + 1 })
}

/// Prediction covariances `P(1..=T)` for a reception pattern, computed with a
/// textbook covariance-form Kalman filter (explicit gain, Joseph update).
///
/// Shares no code with [`riccati_map`]; used to cross-check it.
pub fn batch_covariance_oracle(sys: &LinearSystem, gammas: &[bool]) -> Result<Vec<DMatrix<f64>>> {
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("gamma sequence must be non-empty".into()));
    }
    let (a, c, q, r) = (sys.a(), sys.c(), sys.q(), sys.r());
    let eye = DMatrix::<f64>::identity(sys.n(), sys.n());
    let mut p = sys.sigma0().clone();
    let mut out = Vec::with_capacity(gammas.len());
    for &received in gammas {
        let posterior = if received {
            let s = c * &p * c.transpose() + r;
            let s_inv = s
                .try_inverse()
                .ok_or_else(|| Error::Singular("innovation covariance not invertible".into()))?;
            let k = &p * c.transpose() * s_inv;
            let i_kc = &eye - &k * c;
            &i_kc * &p * i_kc.transpose() + &k * r * k.transpose()
        } else {
            p.clone()
        };
        p = a * posterior * a.transpose() + q;
        p = (&p + p.transpose()) * 0.5;
        out.push(p.clone());
    }
    Ok(out)
}
