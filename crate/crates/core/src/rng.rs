//! Reproducible random streams.
//!
//! Noise values are a pure function of `(seed, slab, site)` via a counter-based
//! hash, so any slab of any realization can be regenerated on demand and in any
//! order. Path randomness comes from ChaCha streams keyed by `(seed, purpose, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for; distinct purposes never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Noise = 1,
    Paths = 2,
    Starts = 3,
    Realizations = 4,
    Auxiliary = 5,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a key tuple.
#[inline]
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C908, |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// Uniform in (0, 1) from 53 hashed bits, never exactly 0.
#[inline]
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal determined entirely by `key` (Box-Muller on two hashed uniforms).
#[inline]
pub fn counter_normal(key: u64) -> f64 {
    let u1 = unit_open(splitmix64(key));
    let u2 = unit_open(splitmix64(key ^ 0xD1B5_4A32_D192_ED03));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Key for one noise site of one slab of the realization identified by `seed`.
#[inline]
pub fn noise_key(seed: u64, slab: u64, i: i64, j: i64) -> u64 {
    mix(&[seed, Purpose::Noise as u64, slab, i as u64, j as u64])
}

/// Independent ChaCha stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, purpose as u64]));
    rng.set_stream(index);
    rng
}

/// Derived seed for a sub-experiment, e.g. the noise seed of realization `r`.
pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    mix(&[seed, purpose as u64, index, 0x5EED])
}
