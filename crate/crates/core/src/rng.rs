//! Seeded randomness. Every component draws from a generator whose seed is
//! derived from a parent seed and a stable label, so adding a consumer never
//! shifts the stream another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::numerics::Tensor;

pub type Rng = ChaCha8Rng;

pub fn child_seed(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(parent: u64, label: &str) -> Rng {
    rng_from(child_seed(parent, label))
}

/// Tensor of i.i.d. `N(0, std²)` draws.
pub fn normal_tensor(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite draws")
}

/// He-normal initialization for a layer with `fan_in` inputs.
pub fn he_tensor(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    normal_tensor(rng, shape, (2.0 / fan_in as f64).sqrt())
}
