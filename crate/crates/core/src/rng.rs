//! Portable random stream used for weight generation and evaluation controls.
//!
//! The generator is xoshiro256** with its 256-bit state expanded from a 64-bit
//! seed by SplitMix64. Uniforms take the top 53 bits of each output
//! (`(x >> 11) * 2^-53`, range `[0, 1)`). Each Gaussian consumes two uniforms
//! `u1, u2` and returns `sqrt(-2 ln(1 - u1)) * cos(2π u2)` (Box–Muller, cosine
//! branch only), so any implementation following these three rules reproduces
//! the same stream.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    /// Standard normal sample.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Mixes two words into a derived seed (one SplitMix64 finalizer round), used
/// to give sub-streams their own seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
