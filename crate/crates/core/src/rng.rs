//! Seeded random helpers on top of ChaCha8. Everything that samples goes
//! through these so that a seed fully determines the byte output of every
//! pipeline stage.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in [0, 1) with 53 random bits.
pub fn unit_f64(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

pub fn uniform_usize(rng: &mut Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    (rng.next_u64() % n as u64) as usize
}

/// Standard normal via Box-Muller; uses two uniforms per sample.
pub fn gaussian(rng: &mut Rng, mean: f64, std: f64) -> f64 {
    let u1 = (unit_f64(rng)).max(1e-300);
    let u2 = unit_f64(rng);
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    mean + std * z
}

/// Uniform in [-scale, scale) as f32; parameter initialization.
pub fn uniform_f32(rng: &mut Rng, scale: f32) -> f32 {
    let u = (rng.next_u64() >> 40) as f32 * (1.0 / (1u64 << 24) as f32);
    (2.0 * u - 1.0) * scale
}

/// Weighted index draw; weights must be non-negative with positive sum.
pub fn weighted_index(rng: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let mut dart = unit_f64(rng) * total;
    for (i, w) in weights.iter().enumerate() {
        dart -= w;
        if dart <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_usize(rng, i + 1);
        items.swap(i, j);
    }
}
