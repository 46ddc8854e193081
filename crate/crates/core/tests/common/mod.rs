#![allow(dead_code)]

pub mod kernels;
pub mod oracles;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use openaff::geometry::PointCloud;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Random labeled cloud inside the unit ball.
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, m: usize) -> PointCloud {
    let points = (0..n)
        .map(|_| {
            let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.55..0.55));
            p
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..m)).collect();
    PointCloud::new(points, Some(labels)).unwrap()
}

/// Labels `l0 .. l{m-1}`.
pub fn names(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("l{i}")).collect()
}
