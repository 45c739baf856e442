//! ARD squared-exponential kernel
//! `kr(x, z) = sigma2 * exp(-0.5 * sum_k w_k (x_k - z_k)^2)`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, Dyn, RowDVector};

use crate::{Error, Points, Result};

/// Relative diagonal jitter added to `K_aa` before any factorization.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    sigma2: f64,
    weights: Vec<f64>,
}

impl KernelParams {
    pub fn new(sigma2: f64, weights: Vec<f64>) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::input(format!("sigma2 must be positive, got {sigma2}")));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::input(format!("kernel weights must be non-negative, got {w}")));
        }
        Ok(Self { sigma2, weights })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Same weights, different variance.
    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        Self::new(sigma2, self.weights.clone())
    }

    #[inline]
    fn eval_unchecked<'a, I>(&self, pairs: I) -> f64
    where
        I: Iterator<Item = (&'a f64, &'a f64)>,
    {
        let mut acc = 0.0;
        for (w, (a, b)) in self.weights.iter().zip(pairs) {
            let d = a - b;
            acc += w * d * d;
        }
        self.sigma2 * libm::exp(-0.5 * acc)
    }
}

pub fn kernel_eval(x: &[f64], z: &[f64], params: &KernelParams) -> Result<f64> {
    if x.len() != params.dim() || z.len() != params.dim() {
        return Err(Error::input(format!(
            "dimension mismatch: x has {}, z has {}, kernel expects {}",
            x.len(),
            z.len(),
            params.dim()
        )));
    }
    Ok(params.eval_unchecked(x.iter().zip(z.iter())))
}

/// Kernel matrix with entry `(i, j) = kr(rows_i, cols_j)`; points are matrix rows.
pub fn gram(rows: &Points, cols: &Points, params: &KernelParams) -> Result<DMatrix<f64>> {
    if rows.nrows() == 0 || cols.nrows() == 0 {
        return Err(Error::input("gram: empty point list"));
    }
    check_dim(rows, params)?;
    check_dim(cols, params)?;
    let mut out = DMatrix::zeros(rows.nrows(), cols.nrows());
    for i in 0..rows.nrows() {
        let r = rows.row(i);
        for j in 0..cols.nrows() {
            out[(i, j)] = params.eval_unchecked(r.iter().zip(cols.row(j).iter()));
        }
    }
    Ok(out)
}

/// Symmetric kernel matrix of a point set with itself; only half is evaluated.
pub fn gram_symmetric(points: &Points, params: &KernelParams) -> Result<DMatrix<f64>> {
    if points.nrows() == 0 {
        return Err(Error::input("gram: empty point list"));
    }
    check_dim(points, params)?;
    let n = points.nrows();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = params.sigma2;
        for j in (i + 1)..n {
            let v = params.eval_unchecked(points.row(i).iter().zip(points.row(j).iter()));
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// `G(x) = [kr(x, a^1), ..., kr(x, a^M)]`.
pub fn g_vector(x: &[f64], inducing: &Points, params: &KernelParams) -> Result<RowDVector<f64>> {
    if inducing.nrows() == 0 {
        return Err(Error::input("g_vector: no inducing points"));
    }
    if x.len() != params.dim() {
        return Err(Error::input(format!(
            "dimension mismatch: x has {}, kernel expects {}",
            x.len(),
            params.dim()
        )));
    }
    check_dim(inducing, params)?;
    Ok(RowDVector::from_iterator(
        inducing.nrows(),
        (0..inducing.nrows()).map(|m| params.eval_unchecked(x.iter().zip(inducing.row(m).iter()))),
    ))
}

fn check_dim(points: &Points, params: &KernelParams) -> Result<()> {
    if points.ncols() != params.dim() {
        return Err(Error::input(format!(
            "dimension mismatch: points have {} columns, kernel expects {}",
            points.ncols(),
            params.dim()
        )));
    }
    Ok(())
}

/// The three kernel matrices of a training set `x` and inducing points `a`.
#[derive(Debug, Clone)]
pub struct GramMatrices {
    pub k_xx: DMatrix<f64>,
    pub k_aa: DMatrix<f64>,
    pub k_xa: DMatrix<f64>,
    sigma2: f64,
}

impl GramMatrices {
    pub fn new(x: &Points, inducing: &Points, params: &KernelParams) -> Result<Self> {
        Ok(Self {
            k_xx: gram_symmetric(x, params)?,
            k_aa: gram_symmetric(inducing, params)?,
            k_xa: gram(x, inducing, params)?,
            sigma2: params.sigma2,
        })
    }

    pub fn n(&self) -> usize {
        self.k_xa.nrows()
    }

    pub fn m(&self) -> usize {
        self.k_xa.ncols()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `K_aa + JITTER * sigma2 * I`, the matrix every downstream solve uses.
    pub fn k_aa_jittered(&self) -> DMatrix<f64> {
        jittered(&self.k_aa, self.sigma2)
    }

    pub fn k_aa_cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.k_aa_jittered())
            .ok_or_else(|| Error::numeric("K_aa is not positive definite after jitter"))
    }
}

pub(crate) fn jittered(k_aa: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
    let mut k = k_aa.clone();
    for i in 0..k.nrows() {
        k[(i, i)] += JITTER * sigma2;
    }
    k
}

/// Solves `L z = b` for the lower Cholesky factor `L`, column by column.
pub(crate) fn solve_lower(chol: &Cholesky<f64, Dyn>, b: &DMatrix<f64>) -> DMatrix<f64> {
    chol.l_dirty()
        .solve_lower_triangular(b)
        .expect("Cholesky factor has a nonzero diagonal")
}
