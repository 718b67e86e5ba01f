//! Fixtures shared by unit tests.

use ndarray::Array3;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::model::{RnnParams, SequenceBatch, Shapes};
use crate::rng;

pub fn random_params(shapes: Shapes, scale: f64, seed: u64) -> RnnParams {
    let mut r = rng::seeded(seed);
    let d = Normal::new(0.0, scale).unwrap();
    let mut p = RnnParams::zeros(shapes);
    for s in p.as_slices_mut() {
        for v in s.iter_mut() {
            *v = d.sample(&mut r);
        }
    }
    p
}

pub fn random_batch(n: usize, t: usize, notes: usize, density: f64, seed: u64) -> SequenceBatch {
    let mut r = rng::seeded(seed);
    let frames = Array3::from_shape_fn((n, t, notes), |_| {
        if r.random::<f64>() < density {
            1.0
        } else {
            0.0
        }
    });
    SequenceBatch::full(frames).unwrap()
}

