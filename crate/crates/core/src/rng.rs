//! Counter-based keyed randomness.
//!
//! Every random decision in the pipeline is a pure function of a 64-bit key
//! and a counter (usually a document id), so results do not depend on
//! processing order or on how work is split across threads.
//!
//! The mixer is the splitmix64 finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! and `mix64(seed, ctr) = fin(fin(seed + G) + (ctr + 1) * G)` with
//! `G = 0x9E3779B97F4A7C15`, all arithmetic wrapping mod 2^64.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a key and a counter into 64 well-distributed bits.
#[inline]
pub fn mix64(seed: u64, counter: u64) -> u64 {
    let key = splitmix_finalize(seed.wrapping_add(GOLDEN_GAMMA));
    splitmix_finalize(key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Maps 64 random bits to the open interval (0, 1) using the top 52 bits,
/// offset by half a grid step so that neither endpoint is reachable.
#[inline]
pub fn bits_to_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Uniform draw in (0, 1) for `(seed, counter)`.
#[inline]
pub fn keyed_unit(seed: u64, counter: u64) -> f64 {
    bits_to_unit(mix64(seed, counter))
}

/// Derives an independent sub-key, e.g. one per epoch or per purpose.
#[inline]
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ 0xA5A5_A5A5_A5A5_A5A5, tag)
}
