#![allow(dead_code)]

use mmfhe::dataset::Dataset;
use mmfhe::experiment::TrainConfig;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Each class lives near a random 2-D affine patch in `dim` dimensions.
pub fn synthetic(classes: u32, per_class: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: Vec<(Vec<f64>, Vec<f64>)> = (0..classes)
        .map(|_| {
            let centre = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
            let basis = (0..2 * dim).map(|_| rng.random_range(-0.4..0.4)).collect();
            (centre, basis)
        })
        .collect();
    let n = classes as usize * per_class;
    let mut x = DMatrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = (i % classes as usize) as u32;
        let (centre, basis) = &shapes[c as usize];
        let (s, t): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        for k in 0..dim {
            x[(i, k)] = centre[k] + s * basis[k] + t * basis[dim + k] + 0.03 * rng.random_range(-1.0..1.0);
        }
        labels.push(c);
    }
    Dataset { x, labels, groups: None }
}

pub fn small_config() -> TrainConfig {
    TrainConfig { layers: 2, subspace_dim: 3, ..TrainConfig::default() }
}
