//! Globally convergent variational learning of a bank of membership-mappings.
//!
//! [`learn`] picks the inducing points, shrinks `M` until the trace term `tau`
//! is positive, rescales the kernel variance so that the fixed-point map is a
//! contraction, solves for the inverse precision and finally the coefficient
//! matrix `alpha` used by [`predict`].

mod robust;
mod variance;

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

pub use robust::{robustness_bound, RobustnessBound};
pub use variance::{
    compute_alpha, compute_tau, fixed_point_solve, fixed_point_solve_from, variance_function, FixedPoint,
    FixedPointConfig, SvdSplit, VarianceFunction,
};

use crate::kernel::{g_vector, gram, GramMatrices, KernelParams};
use crate::kmeans::{kmeans, KMeansConfig};
use crate::{Error, Points, Result};

/// Default Student-t degrees of freedom.
pub const DEFAULT_NU: f64 = 2.1;

/// `tau` counts as positive only above this fraction of `tr(K_xx) / (nu + M - 2)`.
///
/// With `M = N` the trace difference is zero analytically but the diagonal
/// jitter and rounding leave a residue of order `1e-10 * tr(K_xx)`.
pub const TAU_REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub nu: f64,
    pub kmeans: KMeansConfig,
    /// Decrement applied to `M` while `tau <= 0`.
    pub m_stride: usize,
    pub fixed_point: FixedPointConfig,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            nu: DEFAULT_NU,
            kmeans: KMeansConfig::default(),
            m_stride: 1,
            fixed_point: FixedPointConfig::default(),
        }
    }
}

/// Learned parameters of one layer of membership-mappings.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMappingModel {
    /// `M x p`, column `j` is `alpha_j`.
    pub alpha: DMatrix<f64>,
    /// `M x n`, one inducing point per row.
    pub inducing: Points,
    pub kernel: KernelParams,
    pub nu: f64,
    /// Fixed point of the inverse-precision map; zero only for all-zero targets.
    pub beta_inv: f64,
}

impl MembershipMappingModel {
    pub fn m(&self) -> usize {
        self.inducing.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inducing.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.alpha.ncols()
    }
}

/// What [`learn`] did on the way to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnReport {
    pub m_max: usize,
    pub m: usize,
    pub tau_unit: f64,
    pub tau: f64,
    pub sigma2: f64,
    pub beta_low: f64,
    pub beta_up: f64,
    pub fixed_point: FixedPoint,
}

/// `w_k = (max_i x_k^i - min_i x_k^i)^{-2}`, and `0` for a constant feature.
pub fn default_weights(x: &Points) -> Vec<f64> {
    x.column_iter()
        .map(|col| {
            let range = col.max() - col.min();
            if range > 0.0 && range.is_finite() {
                1.0 / (range * range)
            } else {
                0.0
            }
        })
        .collect()
}

/// k-means centroids of the rows of `x`.
pub fn select_inducing_points(x: &Points, m: usize, config: &KMeansConfig) -> Result<Points> {
    if m == 0 || m > x.nrows() {
        return Err(Error::input(format!("need 1 <= M <= N, got M = {m}, N = {}", x.nrows())));
    }
    Ok(kmeans(x, m, config)?.centroids)
}

/// Variance that makes the contraction condition hold.
///
/// `tau_unit` is `tau` at `sigma2 = 1`; `b2_norm2[j] = ||b_j^2||^2`.
pub fn adjust_sigma(tau_unit: f64, y: &DMatrix<f64>, b2_norm2: &[f64]) -> Result<f64> {
    if !(tau_unit > 0.0) {
        return Err(Error::input(format!("adjust_sigma requires tau > 0, got {tau_unit:e}")));
    }
    if b2_norm2.len() != y.ncols() {
        return Err(Error::input("adjust_sigma: one ||b2||^2 per output column expected"));
    }
    let pn = (y.nrows() * y.ncols()) as f64;
    let q = y
        .column_iter()
        .zip(b2_norm2)
        .map(|(c, b2)| 2.0 * c.norm_squared() - b2)
        .sum::<f64>()
        / pn;
    Ok(if tau_unit > q { 1.0 } else { 1.1 * q / tau_unit })
}

/// `tau` must also clear the rounding error of the trace difference, which
/// grows like `eps * cond(K_aa) * tr(K_xx)`. Below that bound two equivalent
/// evaluations of `tau` can disagree in sign, and the variance adjustment
/// `sigma2 ~ 1 / tau` would amplify noise.
fn tau_is_positive(gram: &GramMatrices, tau: f64, nu: f64) -> bool {
    let scale = gram.k_xx.trace() / (nu + gram.m() as f64 - 2.0);
    let eig = gram.k_aa_jittered().symmetric_eigenvalues();
    let cond = eig.max() / eig.min().max(f64::MIN_POSITIVE);
    tau > TAU_REL_FLOOR.max(f64::EPSILON * cond) * scale
}

/// Outcome of the `M` reduction loop.
#[derive(Debug, Clone)]
pub struct InducingChoice {
    pub m: usize,
    pub inducing: Points,
    pub tau_unit: f64,
    pub decrements: usize,
}

/// Largest `M <= m_max`, stepping down by `config.m_stride`, whose `tau` at
/// unit variance is positive.
pub fn reduce_m_until_tau_positive(
    x: &Points,
    m_max: usize,
    weights: &[f64],
    config: &LearnConfig,
) -> Result<InducingChoice> {
    if m_max == 0 || m_max > x.nrows() {
        return Err(Error::input(format!("need 1 <= M_max <= N, got M_max = {m_max}, N = {}", x.nrows())));
    }
    let unit = KernelParams::new(1.0, weights.to_vec())?;
    let stride = config.m_stride.max(1);
    let mut m = m_max;
    let mut decrements = 0;
    loop {
        let inducing = select_inducing_points(x, m, &config.kmeans)?;
        let g = GramMatrices::new(x, &inducing, &unit)?;
        let tau_unit = compute_tau(&g, config.nu, m)?;
        if tau_is_positive(&g, tau_unit, config.nu) {
            return Ok(InducingChoice { m, inducing, tau_unit, decrements });
        }
        if m == 1 {
            return Err(Error::TauNonPositive);
        }
        m = m.saturating_sub(stride).max(1);
        decrements += 1;
    }
}

pub fn learn(x: &Points, y: &DMatrix<f64>, m_max: usize, config: &LearnConfig) -> Result<MembershipMappingModel> {
    learn_with_report(x, y, m_max, config).map(|(m, _)| m)
}

pub fn learn_with_report(
    x: &Points,
    y: &DMatrix<f64>,
    m_max: usize,
    config: &LearnConfig,
) -> Result<(MembershipMappingModel, LearnReport)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::input(format!("need at least 2 samples, got {n}")));
    }
    if y.nrows() != n {
        return Err(Error::input(format!("x has {n} rows but y has {}", y.nrows())));
    }
    if y.ncols() == 0 || x.ncols() == 0 {
        return Err(Error::input("empty input or output dimension"));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite value in training data"));
    }

    let weights = default_weights(x);
    let choice = reduce_m_until_tau_positive(x, m_max, &weights, config)?;
    let unit = KernelParams::new(1.0, weights)?;
    let k_xa_unit = gram(x, &choice.inducing, &unit)?;
    let split_unit = SvdSplit::new(&k_xa_unit, y)?;
    let sigma2 = adjust_sigma(choice.tau_unit, y, &split_unit.b2_norm2)?;

    let kernel = unit.with_sigma2(sigma2)?;
    let grams = GramMatrices::new(x, &choice.inducing, &kernel)?;
    let tau = compute_tau(&grams, config.nu, choice.m)?;
    let split = split_unit.scaled(sigma2);
    let chol = grams.k_aa_cholesky()?;
    let f = VarianceFunction::new(&split, &chol, tau)?;
    let fp = fixed_point_solve(&f, &config.fixed_point)?;
    let alpha = compute_alpha(fp.beta_inv, &grams, tau, y)?;

    let report = LearnReport {
        m_max,
        m: choice.m,
        tau_unit: choice.tau_unit,
        tau,
        sigma2,
        beta_low: f.low(),
        beta_up: f.up(),
        fixed_point: fp,
    };
    let model = MembershipMappingModel {
        alpha,
        inducing: choice.inducing,
        kernel,
        nu: config.nu,
        beta_inv: fp.beta_inv,
    };
    Ok((model, report))
}

/// `y_hat(x) = alpha^T G(x)^T`.
pub fn predict(x: &[f64], model: &MembershipMappingModel) -> Result<DVector<f64>> {
    let g = g_vector(x, &model.inducing, &model.kernel)?;
    Ok((g * &model.alpha).transpose())
}

/// Predictions for every row of `x`, one output row per input row.
pub fn predict_batch(x: &Points, model: &MembershipMappingModel) -> Result<DMatrix<f64>> {
    Ok(gram(x, &model.inducing, &model.kernel)? * &model.alpha)
}
