//! Deterministic seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by
//! `(master seed, purpose tag)` and optionally a stream index, so parallel
//! work produces the same values regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash_tag(tag: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Child seed for a named purpose.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ splitmix64(hash_tag(tag)))
}

/// Child seed for a purpose and a sequence of indices (config, run, ...).
pub fn derive_indexed(seed: u64, tag: &str, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(derive_seed(seed, tag), |acc, &i| splitmix64(acc ^ splitmix64(i.wrapping_add(1))))
}

pub fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag))
}

/// Counter-based substream: one independent generator per `index`.
pub fn substream(seed: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut rng = stream(seed, tag);
    rng.set_stream(index);
    rng
}
