//! Seed derivation. Every random draw in the pipeline comes from a stream
//! keyed by `(seed, label, index)`, so any iteration can be replayed without
//! carrying generator state around.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use autograd::Tensor;

pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

pub fn standard_normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Noise batch `N×d_z` for the remapper.
pub fn noise(seed: u64, label: &str, index: u64, batch: usize, dim: usize) -> Tensor {
    standard_normal(&mut stream(seed, label, index), &[batch, dim])
}
