//! Deterministic seed derivation.
//!
//! Every random draw in the lab comes from a `ChaCha8Rng` seeded through
//! [`derive_seed`], so results do not depend on thread scheduling or on the
//! order in which independent items are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a global seed with any number of stream identifiers
/// (clip index, epoch, step index...).
pub fn derive_seed(global: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(global), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Hashes a string identifier (e.g. a clip name) into a stream id.
pub fn stream_id(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn rng_for(global: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, parts))
}
