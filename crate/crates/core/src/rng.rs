//! Seed derivation and sampling helpers shared by the benchmark generator,
//! the toy embedder and training.
//!
//! Everything downstream derives child seeds from a base seed plus salts, so
//! runs are reproducible and scene generation can be parallelized without
//! shared RNG state.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mix a base seed with salt words (splitmix64 finalizer per word).
pub fn derive_seed(base: u64, salts: &[u64]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &salt in salts {
        state = state.wrapping_add(salt).wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = splitmix64(state);
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal sample via Box-Muller.
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
