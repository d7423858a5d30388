//! Seedable random streams.
//!
//! Every random draw in the crate goes through [`Stream`], a ChaCha8 generator
//! addressed by `(seed, stream id)`. Uniforms are built from the top 53 bits of
//! a `u64` and shifted by half an ulp so they lie in the open interval (0, 1).
//! Normals use the Box–Muller transform
//! `z0 = sqrt(-2 ln u1) cos(2π u2)`, `z1 = sqrt(-2 ln u1) sin(2π u2)`,
//! and Gumbel variates use `-ln(-ln u)`. All three transforms are plain IEEE
//! arithmetic so a given seed reproduces the same draws on every platform.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Generator for stream `stream` of master seed `seed`. Distinct stream ids
/// give statistically independent sequences.
pub fn stream(seed: u64, stream: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser, used to derive child seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in (0, 1).
#[inline]
pub fn uniform_open<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform index in `0..n`.
#[inline]
pub fn index<R: RngCore>(rng: &mut R, n: usize) -> usize {
    rng.gen_range(0..n as u32) as usize
}

#[inline]
pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    let u1 = uniform_open(rng);
    let u2 = uniform_open(rng);
    (-2.0 * u1.ln()).sqrt() * (TWO_PI * u2).cos()
}

/// Fills `out` with independent standard normals, two per Box–Muller pair.
pub fn fill_normal<R: RngCore>(rng: &mut R, out: &mut [f64]) {
    let mut chunks = out.chunks_exact_mut(2);
    for pair in &mut chunks {
        let u1 = uniform_open(rng);
        let u2 = uniform_open(rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TWO_PI * u2).sin_cos();
        pair[0] = r * c;
        pair[1] = r * s;
    }
    if let [last] = chunks.into_remainder() {
        *last = standard_normal(rng);
    }
}

#[inline]
pub fn gumbel<R: RngCore>(rng: &mut R) -> f64 {
    -(-uniform_open(rng).ln()).ln()
}

pub fn fill_gumbel<R: RngCore>(rng: &mut R, out: &mut [f64]) {
    for g in out {
        *g = gumbel(rng);
    }
}
