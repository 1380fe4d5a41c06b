//! Seed derivation and counter-based sampling.
//!
//! Everything random in the crate is keyed by a `u64` seed and a tuple of
//! indices, never by the order in which work happens to execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash a master seed together with a path of indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = mix64(master.wrapping_add(GOLDEN));
    for &p in path {
        h = mix64(h ^ mix64(p.wrapping_add(GOLDEN).wrapping_mul(0xD6E8_FEB8_6659_FD93)));
    }
    h
}

/// A ChaCha stream for a derived seed.
pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Uniform in the open interval (0, 1), from 53 random bits.
#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal sample addressed by `(seed, index)`.
///
/// Pure function of its arguments: a Box-Muller pair built from two hashed
/// counters.
pub fn counter_normal(seed: u64, index: u64) -> f64 {
    let base = derive_seed(seed, &[index]);
    let u1 = open_unit(mix64(base ^ 0x1));
    let u2 = open_unit(mix64(base ^ 0x2));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform sample in [0, 1) addressed by `(seed, index)`.
pub fn counter_uniform(seed: u64, index: u64) -> f64 {
    (mix64(derive_seed(seed, &[index]) ^ 0x3) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
