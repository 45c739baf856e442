//! Deterministic k-means (k-means++ seeding, Lloyd iterations).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Points, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { seed: 0x6d6d_6668_6500_0001, max_iter: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: Points,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

impl KMeans {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.nrows()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Row-major copy; Lloyd iterations walk points row by row.
struct Flat {
    data: Vec<f64>,
    dim: usize,
}

impl Flat {
    fn from_points(p: &Points) -> Self {
        let dim = p.ncols();
        let mut data = Vec::with_capacity(p.len());
        for i in 0..p.nrows() {
            data.extend(p.row(i).iter());
        }
        Self { data, dim }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn kmeans(points: &Points, k: usize, config: &KMeansConfig) -> Result<KMeans> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::input("k-means: k must be at least 1"));
    }
    if k > n {
        return Err(Error::input(format!("k-means: k = {k} exceeds the number of points {n}")));
    }
    let dim = points.ncols();
    let flat = Flat::from_points(points);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut centroids = seed_plus_plus(&flat, n, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (best, d) = nearest(flat.row(i), &centroids, dim);
            dists[i] = d;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(flat.row(i)) {
                *s += v;
            }
        }

        // Empty clusters take the point farthest from its current centroid.
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far = None;
            let mut far_d = -1.0;
            for i in 0..n {
                if !taken[i] && counts[assignments[i]] > 1 && dists[i] > far_d {
                    far_d = dists[i];
                    far = Some(i);
                }
            }
            let Some(i) = far else { continue };
            taken[i] = true;
            let old = assignments[i];
            counts[old] -= 1;
            for (s, v) in sums[old * dim..(old + 1) * dim].iter_mut().zip(flat.row(i)) {
                *s -= v;
            }
            assignments[i] = c;
            counts[c] = 1;
            sums[c * dim..(c + 1) * dim].copy_from_slice(flat.row(i));
            changed = true;
        }

        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *dst = s * inv;
            }
        }

        if !changed {
            break;
        }
    }

    // Final assignment against the final centroids.
    for i in 0..n {
        assignments[i] = nearest(flat.row(i), &centroids, dim).0;
    }

    Ok(KMeans {
        centroids: Points::from_row_slice(k, dim, &centroids),
        assignments,
        iterations,
    })
}

fn nearest(x: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centre) in centroids.chunks_exact(dim.max(1)).enumerate() {
        let d = if dim == 0 { 0.0 } else { dist2(x, centre) };
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn seed_plus_plus(flat: &Flat, n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = flat.dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(flat.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(flat.row(i), flat.row(first))).collect();

    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if *d > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just above the running sum.
            pick.unwrap_or_else(|| argmax(&d2))
        } else {
            // Every point coincides with a chosen centre.
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(flat.row(pick));
        for i in 0..flat.len() {
            let d = dist2(flat.row(i), flat.row(pick));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
