//! Seeded random streams.
//!
//! Every random consumer gets its own ChaCha8 stream keyed by `(seed, label)`:
//! the 32-byte ChaCha seed is `SHA-256(seed.to_le_bytes() || label)`. Adding a
//! consumer under a new label leaves all existing streams untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

fn seed_bytes(seed: u64, key: &[u8]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key);
    hasher.finalize().into()
}

/// The random stream for `label` under the master `seed`.
pub fn stream(seed: u64, label: &str) -> SimRng {
    keyed_stream(seed, label.as_bytes())
}

/// Same scheme as [`stream`] with an arbitrary byte key.
pub fn keyed_stream(seed: u64, key: &[u8]) -> SimRng {
    ChaCha8Rng::from_seed(seed_bytes(seed, key))
}

/// A derived 64-bit seed (the first eight digest bytes, little endian).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let bytes = seed_bytes(seed, label.as_bytes());
    u64::from_le_bytes(bytes[..8].try_into().expect("digest has 32 bytes"))
}

pub fn standard_normals<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Isotropic Gaussian d-vector scaled so that `E‖n‖² = 1`.
pub fn isotropic_unit_noise<R: rand::Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    let scale = 1.0 / (d as f64).sqrt();
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}
