//! Plant description and the dense linear-algebra primitives used by the
//! bound solvers.
//!
//! The plant is `x(k+1) = A x(k) + w(k)`, `y(k) = C x(k) + v(k)` with
//! `w ~ N(0, Q)`, `v ~ N(0, R)` and `x(0) ~ N(0, Σ0)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::{Error, Result};

/// Relative tolerance for accepting a matrix as symmetric before it is
/// replaced by `(X + Xᵀ)/2`.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Default positive-definiteness tolerance, relative to the trace.
pub const PD_REL_TOL: f64 = 1e-10;

/// `alpha·ρ(A)²` must stay below `1 - LYAPUNOV_MARGIN` for a discounted
/// Lyapunov solve to be attempted.
pub const LYAPUNOV_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    sigma0: DMatrix<f64>,
}

impl LinearSystem {
    /// Builds a plant after checking dimensions and finiteness.
    ///
    /// Covariances that are symmetric up to [`SYMMETRY_TOL`] are replaced by
    /// their symmetric part. Positive definiteness and instability are not
    /// enforced here; see [`validate_system`].
    pub fn new(
        a: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square with n >= 1, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let m = c.nrows();
        if m == 0 || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "C must be m x {n} with m >= 1, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        for (name, mat, dim) in [("Q", &q, n), ("R", &r, m), ("Sigma0", &sigma0, n)] {
            if mat.nrows() != dim || mat.ncols() != dim {
                return Err(Error::Dimension(format!(
                    "{name} must be {dim}x{dim}, got {}x{}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        }
        for (name, mat) in [("A", &a), ("C", &c), ("Q", &q), ("R", &r), ("Sigma0", &sigma0)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self {
            a,
            c,
            q: symmetrize_if_close(q),
            r: symmetrize_if_close(r),
            sigma0: symmetrize_if_close(sigma0),
        })
    }

    /// Scalar plant with `Σ0 = sigma0`.
    pub fn scalar(a: f64, c: f64, q: f64, r: f64, sigma0: f64) -> Result<Self> {
        let one = |v| DMatrix::from_element(1, 1, v);
        Self::new(one(a), one(c), one(q), one(r), one(sigma0))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn sigma0(&self) -> &DMatrix<f64> {
        &self.sigma0
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Output dimension.
    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_scalar(&self) -> bool {
        self.n() == 1 && self.m() == 1
    }

    /// Same plant with a different output map and measurement noise.
    pub fn with_output(&self, c: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Self::new(self.a.clone(), c, self.q.clone(), r, self.sigma0.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckFailure {
    pub name: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub spectral_radius: f64,
    pub failures: Vec<CheckFailure>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    fn push_failure(&mut self, name: &str, detail: String) {
        self.failures.push(CheckFailure {
            name: name.to_string(),
            detail,
        });
        self.ok = false;
    }

    pub fn has_failure(&self, name: &str) -> bool {
        self.failures.iter().any(|f| f.name == name)
    }
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn symmetrize_if_close(m: DMatrix<f64>) -> DMatrix<f64> {
    let asym = max_abs(&(&m - m.transpose()));
    if asym <= SYMMETRY_TOL * (1.0 + max_abs(&m)) {
        symmetrize(&m)
    } else {
        m
    }
}

fn require_square(x: &DMatrix<f64>, what: &str) -> Result<()> {
    if x.nrows() == 0 || x.nrows() != x.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    Ok(())
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    require_square(a, "matrix")?;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    if a.nrows() == 1 {
        return Ok(a[(0, 0)].abs());
    }
    let schur = nalgebra::Schur::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Singular("Schur decomposition did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Smallest eigenvalue of the symmetric part of `x`.
pub(crate) fn min_sym_eigenvalue(x: &DMatrix<f64>) -> f64 {
    if x.nrows() == 1 {
        return x[(0, 0)];
    }
    SymmetricEigen::new(symmetrize(x)).eigenvalues.min()
}

/// True iff `x` is symmetric within `tol` (max-abs entry of `X - Xᵀ`) and
/// its smallest eigenvalue exceeds `tol`.
pub fn is_positive_definite(x: &DMatrix<f64>, tol: f64) -> Result<bool> {
    require_square(x, "matrix")?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Ok(false);
    }
    if max_abs(&(x - x.transpose())) > tol {
        return Ok(false);
    }
    Ok(min_sym_eigenvalue(x) > tol)
}

fn pd_tol(x: &DMatrix<f64>) -> f64 {
    PD_REL_TOL * x.trace().abs().max(f64::MIN_POSITIVE)
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.max();
    if largest == 0.0 {
        return 0;
    }
    let tol = largest * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * 10.0;
    sv.iter().filter(|s| **s > tol).count()
}

/// Rank of `[C; CA; ...; CA^{n-1}]`.
pub fn observability_rank(a: &DMatrix<f64>, c: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = c.nrows();
    let mut obs = DMatrix::zeros(m * n, n);
    let mut block = c.clone();
    for i in 0..n {
        obs.view_mut((i * m, 0), (m, n)).copy_from(&block);
        block = &block * a;
    }
    numerical_rank(&obs)
}

/// Rank of `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let k = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * k);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * k), (n, k)).copy_from(&block);
        block = a * &block;
    }
    numerical_rank(&ctrb)
}

fn sym_sqrt(x: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(x));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Checks the standing assumptions on a plant. Never fails; every problem is
/// recorded in the report. Rank deficiency of the observability or
/// controllability matrices is a warning only.
pub fn validate_system(sys: &LinearSystem) -> ValidationReport {
    let mut report = ValidationReport {
        ok: true,
        spectral_radius: f64::NAN,
        failures: Vec::new(),
        warnings: Vec::new(),
    };

    for (name, mat) in [
        ("Q positive definite", sys.q()),
        ("R positive definite", sys.r()),
        ("Sigma0 positive definite", sys.sigma0()),
    ] {
        match is_positive_definite(mat, pd_tol(mat)) {
            Ok(true) => {}
            Ok(false) => {
                let asym = max_abs(&(mat - mat.transpose()));
                let detail = if asym > pd_tol(mat) {
                    format!("not symmetric (max asymmetry {asym:e})")
                } else {
                    format!("minimum eigenvalue {:e}", min_sym_eigenvalue(mat))
                };
                report.push_failure(name, detail);
            }
            Err(e) => report.push_failure(name, e.to_string()),
        }
    }

    match spectral_radius(sys.a()) {
        Ok(rho) => {
            report.spectral_radius = rho;
            if rho <= 1.0 {
                report.push_failure(
                    "spectral radius > 1",
                    format!("spectral radius ≤ 1: rho(A) = {rho}"),
                );
            }
        }
        Err(e) => report.push_failure("spectral radius > 1", e.to_string()),
    }

    let n = sys.n();
    let obs = observability_rank(sys.a(), sys.c());
    if obs < n {
        report.warnings.push(format!(
            "observability matrix of (A, C) has rank {obs} < {n}; detectability not certified"
        ));
    }
    if !report.has_failure("Q positive definite") {
        let ctrb = controllability_rank(sys.a(), &sym_sqrt(sys.q()));
        if ctrb < n {
            report.warnings.push(format!(
                "controllability matrix of (A, Q^1/2) has rank {ctrb} < {n}; stabilizability not certified"
            ));
        }
    }
    report
}

/// Solves `(I - op) vec(X) = vec(rhs)` for square `X`, column-major `vec`.
pub(crate) fn solve_vectorized(op: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = rhs.nrows();
    let nn = n * n;
    let lhs = DMatrix::<f64>::identity(nn, nn) - op;
    let b = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let sol = lhs
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("vectorized Lyapunov system is singular".into()))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Unique solution of `S = alpha·A S Aᵀ + Q`, via the Kronecker form
/// `(I - alpha·A⊗A) vec(S) = vec(Q)`.
///
/// Cost is O(n⁶); intended for n ≤ 20.
pub fn solve_discounted_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>, alpha: f64) -> Result<DMatrix<f64>> {
    require_square(a, "A")?;
    if q.nrows() != a.nrows() || q.ncols() != a.ncols() {
        return Err(Error::Dimension(format!(
            "Q must be {}x{}, got {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Range(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let rho = spectral_radius(a)?;
    if alpha * rho * rho >= 1.0 - LYAPUNOV_MARGIN {
        return Err(Error::NoSolution(format!(
            "alpha·rho(A)^2 = {} >= 1",
            alpha * rho * rho
        )));
    }
    if alpha == 0.0 {
        return Ok(symmetrize(q));
    }
    let op = a.kronecker(a) * alpha;
    Ok(symmetrize(&solve_vectorized(&op, q)?))
}
