//! Deterministic seed derivation.
//!
//! Every stochastic stage derives its RNG stream from a base seed plus a
//! stable tag (tree index, bootstrap replicate index, case id, feature name).
//! Streams are therefore independent of evaluation order, which is what makes
//! serial and parallel runs produce identical output.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over bytes. Stable across platforms and Rust versions, unlike
/// `std::collections::hash_map::DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby inputs.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Mix a base seed with an integer tag.
pub fn mix(seed: u64, tag: u64) -> u64 {
    splitmix(splitmix(seed) ^ tag)
}

/// Mix a base seed with a string tag.
pub fn mix_str(seed: u64, tag: &str) -> u64 {
    mix(seed, fnv1a(tag.as_bytes()))
}

/// RNG stream keyed to (seed, tag).
pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tag))
}

/// RNG stream keyed to (seed, string tag).
pub fn stream_str(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_str(seed, tag))
}

/// Hex fingerprint of a byte string, for config/bundle manifests.
pub fn fingerprint(bytes: &[u8]) -> String {
    // Two passes with different offsets give a 128-bit tag; plenty for
    // detecting config drift, not meant to be cryptographic.
    let a = fnv1a(bytes);
    let b = fnv1a(&[bytes, &a.to_le_bytes()[..]].concat());
    format!("{a:016x}{b:016x}")
}
