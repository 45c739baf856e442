//! Thin-SVD bookkeeping, the inverse-precision update map and its fixed point.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};

use crate::kernel::{solve_lower, GramMatrices};
use crate::{Error, Result};

/// `tr(K_xx - K_aa^{-1} K_xa^T K_xa) / (nu + M - 2)`; may be `<= 0`.
pub fn compute_tau(gram: &GramMatrices, nu: f64, m: usize) -> Result<f64> {
    if m != gram.m() {
        return Err(Error::input(format!("compute_tau: m = {m} but gram has {} inducing points", gram.m())));
    }
    if !(nu > 2.0) {
        return Err(Error::input(format!("degrees of freedom must exceed 2, got {nu}")));
    }
    Ok(tau_numerator(gram)? / (nu + m as f64 - 2.0))
}

/// `tr(K_xx) - ||L^{-1} K_xa^T||_F^2` with `L` the Cholesky factor of `K_aa`.
pub(crate) fn tau_numerator(gram: &GramMatrices) -> Result<f64> {
    let chol = gram.k_aa_cholesky()?;
    let b = solve_lower(&chol, &gram.k_xa.transpose());
    Ok(gram.k_xx.trace() - b.norm_squared())
}

/// Thin SVD `K_xa = U S V^T` with the targets projected onto `U`.
#[derive(Debug, Clone)]
pub struct SvdSplit {
    pub u_thin: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
    /// Column `j` is `b_j^1 = U^T y_j`.
    pub b1: DMatrix<f64>,
    /// `||b_j^2||^2 = ||y_j||^2 - ||b_j^1||^2`, clamped at zero.
    pub b2_norm2: Vec<f64>,
    /// `||y_j||^2`.
    pub y_norm2: Vec<f64>,
}

impl SvdSplit {
    /// `y` is `N x p` with one sample per row.
    pub fn new(k_xa: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        let (n, m) = k_xa.shape();
        if y.nrows() != n {
            return Err(Error::input(format!("targets have {} rows, K_xa has {n}", y.nrows())));
        }
        if m > n {
            return Err(Error::input(format!("more inducing points ({m}) than samples ({n})")));
        }
        let svd = SVD::try_new(k_xa.clone(), true, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::numeric("SVD of K_xa did not converge"))?;
        let u_thin = svd.u.ok_or_else(|| Error::numeric("SVD produced no U"))?;
        let v = svd.v_t.ok_or_else(|| Error::numeric("SVD produced no V"))?.transpose();
        let s = svd.singular_values;

        let b1 = u_thin.transpose() * y;
        let y_norm2: Vec<f64> = y.column_iter().map(|c| c.norm_squared()).collect();
        let b2_norm2 = b1
            .column_iter()
            .zip(&y_norm2)
            .map(|(b, yn)| (yn - b.norm_squared()).max(0.0))
            .collect();
        Ok(Self { u_thin, s, v, b1, b2_norm2, y_norm2 })
    }

    /// Split of `c * K_xa`: only the singular values change.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.s *= c;
        out
    }

    pub fn n(&self) -> usize {
        self.u_thin.nrows()
    }

    pub fn p(&self) -> usize {
        self.b1.ncols()
    }

    pub fn b1_norm2(&self) -> Vec<f64> {
        self.b1.column_iter().map(|c| c.norm_squared()).collect()
    }
}

/// The map `R(beta_inv)` whose fixed point is the inverse precision.
///
/// With `A = S V^T K_aa^{-1} V S = Q diag(lambda) Q^T` and `c_j = Q^T b_j^1`,
/// `R(b) = low + (t^2 / pN) sum_i w_i / (t + lambda_i)^2` where `t = tau + b`
/// and `w_i = sum_j c_ij^2`. Each evaluation is O(M).
#[derive(Debug, Clone)]
pub struct VarianceFunction {
    lambda: Vec<f64>,
    weight: Vec<f64>,
    tau: f64,
    pn: f64,
    low: f64,
    up: f64,
    b1_total: f64,
}

impl VarianceFunction {
    pub fn new(split: &SvdSplit, k_aa_chol: &Cholesky<f64, Dyn>, tau: f64) -> Result<Self> {
        let m = split.s.len();
        let mut vs = split.v.clone();
        for (j, s) in split.s.iter().enumerate() {
            vs.column_mut(j).scale_mut(*s);
        }
        // A = W^T W with W = L^{-1} V S. Taking lambda as the squared singular
        // values of W keeps the small eigenvalues accurate; an eigensolver on
        // the formed product loses them to roundoff of order eps * lambda_max.
        let w = solve_lower(k_aa_chol, &vs);
        let svd = SVD::try_new(w, false, true, f64::EPSILON, 0)
            .ok_or_else(|| Error::numeric("SVD of L^-1 V S did not converge"))?;
        let q_t = svd.v_t.ok_or_else(|| Error::numeric("SVD produced no V"))?;
        let c = q_t * &split.b1;
        let weight = c.row_iter().map(|r| r.norm_squared()).collect();
        let lambda = svd.singular_values.iter().map(|s| s * s).collect();

        let pn = (split.p() * split.n()) as f64;
        let low = split.b2_norm2.iter().sum::<f64>() / pn;
        let up = split.y_norm2.iter().sum::<f64>() / pn;
        let b1_total = split.b1_norm2().iter().sum::<f64>();
        debug_assert_eq!(m, split.b1.nrows());
        Ok(Self { lambda, weight, tau, pn, low, up, b1_total })
    }

    pub fn eval(&self, beta_inv: f64) -> f64 {
        let t = self.tau + beta_inv;
        let mut acc = 0.0;
        for (l, w) in self.lambda.iter().zip(&self.weight) {
            let d = t + l;
            acc += w / (d * d);
        }
        self.low + t * t * acc / self.pn
    }

    /// Analytic `dR/d(beta_inv)`.
    pub fn derivative(&self, beta_inv: f64) -> f64 {
        let t = self.tau + beta_inv;
        let mut acc = 0.0;
        for (l, w) in self.lambda.iter().zip(&self.weight) {
            let d = t + l;
            acc += w * 2.0 * t * l / (d * d * d);
        }
        acc / self.pn
    }

    /// Upper bound `(2 / pN) (tau + beta_inv)^{-1} sum_j ||b_j^1||^2` on the derivative.
    pub fn derivative_bound(&self, beta_inv: f64) -> f64 {
        2.0 * self.b1_total / (self.pn * (self.tau + beta_inv))
    }

    /// `beta_inv|_low = (1/pN) sum_j ||b_j^2||^2`.
    pub fn low(&self) -> f64 {
        self.low
    }

    /// `beta_inv|_up = (1/pN) sum_j ||y_j||^2`.
    pub fn up(&self) -> f64 {
        self.up
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Right-hand side of the sufficient convergence condition on `tau`:
    /// `(2/pN) sum ||y_j||^2 - (1/pN) sum ||b_j^2||^2`.
    pub fn convergence_threshold(&self) -> f64 {
        2.0 * self.up - self.low
    }
}

/// `R(beta_inv)` evaluated from scratch.
pub fn variance_function(beta_inv: f64, split: &SvdSplit, k_aa: &DMatrix<f64>, tau: f64) -> Result<f64> {
    let chol = Cholesky::new(k_aa.clone()).ok_or_else(|| Error::numeric("K_aa is not positive definite"))?;
    Ok(VarianceFunction::new(split, &chol, tau)?.eval(beta_inv))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-12, max_iter: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub beta_inv: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Iterates `b <- R(b)` from the midpoint of `(low, up)`.
pub fn fixed_point_solve(f: &VarianceFunction, config: &FixedPointConfig) -> Result<FixedPoint> {
    fixed_point_solve_from(f, 0.5 * (f.low() + f.up()), config)
}

pub fn fixed_point_solve_from(f: &VarianceFunction, start: f64, config: &FixedPointConfig) -> Result<FixedPoint> {
    let mut beta_inv = start;
    let mut residual = f64::INFINITY;
    for it in 0..=config.max_iter {
        let next = f.eval(beta_inv);
        residual = (next - beta_inv).abs();
        if residual <= config.rel_tol * beta_inv.max(1.0) {
            return Ok(FixedPoint { beta_inv, iterations: it, residual });
        }
        if !next.is_finite() {
            break;
        }
        beta_inv = next;
    }
    Err(Error::Convergence { iterations: config.max_iter, residual })
}

/// `alpha = (K_xa^T K_xa + (tau + beta_inv) K_aa)^{-1} K_xa^T Y`, one column per output.
///
/// Solved as the least-squares problem `[K_xa; sqrt(t) L^T] alpha ~ [Y; 0]`
/// (with `K_aa = L L^T`) by Householder QR. Forming the normal matrix would
/// square a condition number that already reaches `1e10` once the variance
/// adjustment has inflated `sigma2`.
pub fn compute_alpha(beta_inv: f64, gram: &GramMatrices, tau: f64, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if y.nrows() != gram.n() {
        return Err(Error::input(format!("targets have {} rows, K_xa has {}", y.nrows(), gram.n())));
    }
    let t = tau + beta_inv;
    if !(t > 0.0) {
        return Err(Error::numeric(format!("alpha system needs tau + beta_inv > 0, got {t:e}")));
    }
    let (n, m) = gram.k_xa.shape();
    let l = gram.k_aa_cholesky()?.unpack();
    let mut a = DMatrix::zeros(n + m, m);
    a.rows_mut(0, n).copy_from(&gram.k_xa);
    a.rows_mut(n, m).copy_from(&(l.transpose() * libm::sqrt(t)));
    let mut rhs = DMatrix::zeros(n + m, y.ncols());
    rhs.rows_mut(0, n).copy_from(y);

    let qr = a.qr();
    qr.q_tr_mul(&mut rhs);
    qr.r()
        .solve_upper_triangular(&rhs.rows(0, m).into_owned())
        .ok_or_else(|| Error::numeric(format!("alpha system is singular (tau + beta_inv = {t:e})")))
}
