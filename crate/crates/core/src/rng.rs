//! Seeded randomness.
//!
//! All randomness flows from ChaCha8 (a counter-based stream cipher
//! generator) seeded with a `u64`, so runs reproduce across platforms.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Tensor};

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a labelled purpose.
pub fn derived(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in `±√(6/(fan_in+fan_out))`.
pub fn xavier_uniform<F: Real>(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| F::lit(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape")
}

pub fn normal<F: Real>(rng: &mut Rng, shape: &[usize], std_dev: f64) -> Tensor<F> {
    let dist = Normal::new(0.0, std_dev).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::lit(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Fisher–Yates shuffle driven by the seeded generator.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
