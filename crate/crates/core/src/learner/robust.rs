use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{compute_alpha, compute_tau, MembershipMappingModel};
use crate::kernel::GramMatrices;
use crate::{Error, Result};

/// Perturbation radius for which the learned `alpha_j` solves the worst-case
/// residual min-max problem, one value per output.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessBound {
    pub delta_m: Vec<f64>,
    pub tau: f64,
}

/// `delta_m = sqrt(1 + ||K_aa^{1/2} alpha_j||^2) / ||((tau + b) I + K_xa K_aa^{-1} K_xa^T)^{-1} y_j||`
/// with `b` the learned inverse precision. `gram` must be the training grams.
pub fn robustness_bound(
    model: &MembershipMappingModel,
    gram: &GramMatrices,
    y: &DMatrix<f64>,
) -> Result<RobustnessBound> {
    let tau = compute_tau(gram, model.nu, gram.m())?;
    let t = tau + model.beta_inv;
    let alpha = compute_alpha(model.beta_inv, gram, tau, y)?;
    let k_aa = gram.k_aa_jittered();
    // Woodbury: (t I + K_xa K_aa^-1 K_xa^T)^-1 y_j = (y_j - K_xa alpha_j) / t
    let resid = y - &gram.k_xa * &alpha;

    let mut delta_m = Vec::with_capacity(y.ncols());
    for j in 0..y.ncols() {
        if y.column(j).norm_squared() == 0.0 {
            return Err(Error::DiagnosticUnavailable(format!("output {j} is identically zero")));
        }
        let a = alpha.column(j);
        let numerator = libm::sqrt(1.0 + (a.transpose() * &k_aa * a)[(0, 0)]);
        let denominator = resid.column(j).norm() / t;
        if !(denominator > 0.0) {
            return Err(Error::DiagnosticUnavailable(format!("output {j} is reproduced exactly")));
        }
        delta_m.push(numerator / denominator);
    }
    Ok(RobustnessBound { delta_m, tau })
}
