//! Conditionally deep membership-mapping autoencoders and their wide
//! (parallel) composition.
//!
//! A [`CdmmaModel`] stacks `L` membership-mapping layers. Layer `l` sees the
//! projection `P^l` of the previous layer's reconstruction, and filtering keeps
//! whichever layer reconstructs the input best. A [`WideCdmmaModel`] holds one
//! such stack per k-means part of the data and keeps the best part.
//!
//! Layer and part indices returned here are zero-based.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::kmeans::kmeans;
use crate::learner::{learn_with_report, predict_batch, LearnConfig, LearnReport, MembershipMappingModel};
use crate::{Error, Points, Result};

/// Target number of samples per part of a wide model.
pub const PART_SIZE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct CdmmaModel {
    pub layers: Vec<MembershipMappingModel>,
    /// `P^l`, shape `n_l x p`, orthonormal rows.
    pub projections: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WideCdmmaModel {
    pub submodels: Vec<CdmmaModel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdmmaReport {
    pub layers: Vec<LearnReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WideReport {
    pub part_sizes: Vec<usize>,
    /// Selected `r_max` per part.
    pub r_chosen: Vec<f64>,
    pub submodels: Vec<CdmmaReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WideConfig {
    pub layers: usize,
    /// Subspace dimension `n` of the first layer.
    pub subspace_dim: usize,
    pub r_grid: Vec<f64>,
    pub learn: LearnConfig,
}

impl Default for WideConfig {
    fn default() -> Self {
        Self { layers: 5, subspace_dim: 20, r_grid: alloc::vec![0.5], learn: LearnConfig::default() }
    }
}

/// `n_l = max(n - l + 1, 1)` for one-based `l`.
pub fn layer_dim(n: usize, l: usize) -> usize {
    (n + 1).saturating_sub(l).max(1)
}

/// Principal axes of the rows of `y`, sorted by decreasing eigenvalue.
///
/// Each axis is signed so that its largest-magnitude entry is positive.
pub fn pca_basis(y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = y.nrows();
    if n < 2 {
        return Err(Error::input(format!("PCA needs at least 2 samples, got {n}")));
    }
    let p = y.ncols();
    let mean = y.row_mean();
    let mut centred = y.clone();
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    let cov = centred.tr_mul(&centred) / (n as f64 - 1.0);
    let eig = SymmetricEigen::try_new(cov, f64::EPSILON, 0)
        .ok_or_else(|| Error::numeric("covariance eigendecomposition did not converge"))?;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut basis = DMatrix::zeros(p, p);
    for (row, &idx) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(idx);
        let mut lead = 0;
        for k in 1..p {
            if v[k].abs() > v[lead].abs() {
                lead = k;
            }
        }
        let sign = if v[lead] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..p {
            basis[(row, k)] = sign * v[k];
        }
    }
    Ok(basis)
}

/// First `n_l` principal axes of `y` as the rows of an `n_l x p` matrix.
pub fn pca_projection(y: &DMatrix<f64>, n_l: usize) -> Result<DMatrix<f64>> {
    if n_l == 0 || n_l > y.ncols() {
        return Err(Error::input(format!("need 1 <= n_l <= p = {}, got {n_l}", y.ncols())));
    }
    Ok(pca_basis(y)?.rows(0, n_l).into_owned())
}

pub fn learn_cdmma(
    y: &DMatrix<f64>,
    n: usize,
    m_max: usize,
    layers: usize,
    config: &LearnConfig,
) -> Result<CdmmaModel> {
    learn_cdmma_with_report(y, n, m_max, layers, config).map(|(m, _)| m)
}

pub fn learn_cdmma_with_report(
    y: &DMatrix<f64>,
    n: usize,
    m_max: usize,
    layers: usize,
    config: &LearnConfig,
) -> Result<(CdmmaModel, CdmmaReport)> {
    let basis = check_and_basis(y, n, layers)?;
    learn_cdmma_from_basis(y, &basis, n, m_max, layers, config)
}

fn check_and_basis(y: &DMatrix<f64>, n: usize, layers: usize) -> Result<DMatrix<f64>> {
    if layers == 0 {
        return Err(Error::input("need at least one layer"));
    }
    if n == 0 || n > y.ncols() {
        return Err(Error::input(format!("need 1 <= n <= p = {}, got n = {n}", y.ncols())));
    }
    pca_basis(y)
}

fn learn_cdmma_from_basis(
    y: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    n: usize,
    m_max: usize,
    layers: usize,
    config: &LearnConfig,
) -> Result<(CdmmaModel, CdmmaReport)> {
    let mut model = CdmmaModel { layers: Vec::with_capacity(layers), projections: Vec::with_capacity(layers) };
    let mut reports = Vec::with_capacity(layers);
    let mut input: DMatrix<f64> = y.clone();
    let mut cap = m_max;
    for l in 1..=layers {
        let proj = basis.rows(0, layer_dim(n, l)).into_owned();
        let x: Points = &input * proj.transpose();
        let (layer, report) = learn_with_report(&x, y, cap, config)?;
        cap = layer.m();
        input = predict_batch(&x, &layer)?;
        model.layers.push(layer);
        model.projections.push(proj);
        reports.push(report);
    }
    Ok((model, CdmmaReport { layers: reports }))
}

impl CdmmaModel {
    pub fn output_dim(&self) -> usize {
        self.projections[0].ncols()
    }

    /// Reconstructions `y_hat^l` of every row of `y`, one matrix per layer.
    pub fn layer_outputs(&self, y: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        if y.ncols() != self.output_dim() {
            return Err(Error::input(format!("expected {} columns, got {}", self.output_dim(), y.ncols())));
        }
        let mut outs: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for (layer, proj) in self.layers.iter().zip(&self.projections) {
            let prev = outs.last().unwrap_or(y);
            let x = prev * proj.transpose();
            outs.push(predict_batch(&x, layer)?);
        }
        Ok(outs)
    }

    /// Best-layer reconstruction of each row and the chosen layer.
    pub fn filter_batch(&self, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<usize>)> {
        let outs = self.layer_outputs(y)?;
        let mut best = outs[0].clone();
        let mut which = alloc::vec![0; y.nrows()];
        let mut err: Vec<f64> = (0..y.nrows()).map(|i| (y.row(i) - best.row(i)).norm_squared()).collect();
        for (l, out) in outs.iter().enumerate().skip(1) {
            for i in 0..y.nrows() {
                let e = (y.row(i) - out.row(i)).norm_squared();
                if e < err[i] {
                    err[i] = e;
                    which[i] = l;
                    best.set_row(i, &out.row(i));
                }
            }
        }
        Ok((best, which))
    }
}

/// Filters `y` through the layer with the smallest reconstruction error.
pub fn cdmma_filter(y: &[f64], model: &CdmmaModel) -> Result<(DVector<f64>, usize)> {
    let row = DMatrix::from_row_slice(1, y.len(), y);
    let (out, which) = model.filter_batch(&row)?;
    Ok((out.row(0).transpose(), which[0]))
}

/// Assigns points to `parts` k-means clusters and folds clusters with fewer
/// than two points into the nearest surviving cluster.
fn partition(y: &DMatrix<f64>, parts: usize, config: &LearnConfig) -> Result<Vec<Vec<usize>>> {
    if parts == 1 {
        return Ok(alloc::vec![(0..y.nrows()).collect()]);
    }
    let km = kmeans(y, parts, &config.kmeans)?;
    let sizes = km.cluster_sizes();
    let keep: Vec<usize> = (0..parts).filter(|&c| sizes[c] >= 2).collect();
    if keep.is_empty() {
        return Ok(alloc::vec![(0..y.nrows()).collect()]);
    }
    let mut groups: Vec<Vec<usize>> = alloc::vec![Vec::new(); keep.len()];
    for (i, &c) in km.assignments.iter().enumerate() {
        let target = match keep.iter().position(|&k| k == c) {
            Some(g) => g,
            None => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (g, &k) in keep.iter().enumerate() {
                    let d = (km.centroids.row(k) - y.row(i)).norm_squared();
                    if d < best_d {
                        best_d = d;
                        best = g;
                    }
                }
                best
            }
        };
        groups[target].push(i);
    }
    Ok(groups)
}

fn m_cap(r: f64, size: usize) -> usize {
    (libm::floor(r * size as f64) as usize).clamp(1, size)
}

pub fn learn_wide_cdmma(y: &DMatrix<f64>, config: &WideConfig) -> Result<WideCdmmaModel> {
    learn_wide_cdmma_with_report(y, config).map(|(m, _)| m)
}

pub fn learn_wide_cdmma_with_report(y: &DMatrix<f64>, config: &WideConfig) -> Result<(WideCdmmaModel, WideReport)> {
    let grid = &config.r_grid;
    if grid.is_empty() {
        return Err(Error::input("r grid is empty"));
    }
    if grid.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("r grid must be strictly increasing within (0, 1]"));
    }
    if y.nrows() < 2 {
        return Err(Error::input(format!("need at least 2 samples, got {}", y.nrows())));
    }
    let parts = y.nrows().div_ceil(PART_SIZE);
    let groups = partition(y, parts, &config.learn)?;

    let mut model = WideCdmmaModel { submodels: Vec::with_capacity(groups.len()) };
    let mut report = WideReport { part_sizes: Vec::new(), r_chosen: Vec::new(), submodels: Vec::new() };
    for idx in &groups {
        let part = y.select_rows(idx.iter());
        let basis = check_and_basis(&part, config.subspace_dim, config.layers)?;
        let size = part.nrows();
        let r = if grid.len() == 1 {
            grid[0]
        } else {
            let mut best = (grid[0], f64::INFINITY);
            for &r in grid {
                let (_, probe) =
                    learn_cdmma_from_basis(&part, &basis, config.subspace_dim, m_cap(r, size), 1, &config.learn)?;
                let beta_inv = probe.layers[0].fixed_point.beta_inv;
                if beta_inv < best.1 {
                    best = (r, beta_inv);
                }
            }
            best.0
        };
        let (sub, sub_report) = learn_cdmma_from_basis(
            &part,
            &basis,
            config.subspace_dim,
            m_cap(r, size),
            config.layers,
            &config.learn,
        )?;
        model.submodels.push(sub);
        report.part_sizes.push(size);
        report.r_chosen.push(r);
        report.submodels.push(sub_report);
    }
    Ok((model, report))
}

impl WideCdmmaModel {
    pub fn output_dim(&self) -> usize {
        self.submodels[0].output_dim()
    }

    /// Best-submodel reconstruction of each row and the chosen submodel.
    pub fn filter_batch(&self, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<usize>)> {
        let (mut best, _) = self.submodels[0].filter_batch(y)?;
        let mut which = alloc::vec![0; y.nrows()];
        let mut err: Vec<f64> = (0..y.nrows()).map(|i| (y.row(i) - best.row(i)).norm_squared()).collect();
        for (s, sub) in self.submodels.iter().enumerate().skip(1) {
            let (out, _) = sub.filter_batch(y)?;
            for i in 0..y.nrows() {
                let e = (y.row(i) - out.row(i)).norm_squared();
                if e < err[i] {
                    err[i] = e;
                    which[i] = s;
                    best.set_row(i, &out.row(i));
                }
            }
        }
        Ok((best, which))
    }

    /// Squared reconstruction errors `||y - WD(y)||^2` of every row.
    pub fn reconstruction_errors(&self, y: &DMatrix<f64>) -> Result<Vec<f64>> {
        let (out, _) = self.filter_batch(y)?;
        Ok((0..y.nrows()).map(|i| (y.row(i) - out.row(i)).norm_squared()).collect())
    }
}

/// Filters `y` through the submodel with the smallest reconstruction error.
pub fn wide_filter(y: &[f64], model: &WideCdmmaModel) -> Result<(DVector<f64>, usize)> {
    let row = DMatrix::from_row_slice(1, y.len(), y);
    let (out, which) = model.filter_batch(&row)?;
    Ok((out.row(0).transpose(), which[0]))
}
