//! Deterministic RNG stream derivation.
//!
//! Every random draw in the library comes from a `ChaCha12Rng` derived from a
//! single master seed plus a tag sequence naming the consumer (stream kind,
//! animal index, cycle index, ...). Two consumers with different tag sequences
//! get statistically independent streams, and the mapping is a pure function of
//! `(master, tags)`, so results never depend on thread scheduling.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

/// Stream tags for the library's independent RNG consumers.
///
/// Keep these stable: changing a value changes every result downstream of it.
pub mod stream {
    pub const SIM_PATH: u64 = 1;
    pub const SIM_OBS: u64 = 2;
    pub const SIM_SCHEDULE: u64 = 3;
    pub const CHAIN_INIT: u64 = 4;
    pub const CHAIN_SWEEP: u64 = 5;
    pub const CHAIN_RATES: u64 = 6;
    pub const EVIDENCE_INNER: u64 = 7;
    pub const ASSESS: u64 = 8;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function: a strong 64-bit mixer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 256-bit ChaCha12 seed from a master seed and a tag sequence.
///
/// Tags are absorbed sequentially with their position, so `[a, b]` and `[b, a]`
/// (and any prefix) land in different streams.
pub fn derive_seed(master: u64, tags: &[u64]) -> [u8; 32] {
    let mut state = mix(master ^ GOLDEN);
    for (i, &tag) in tags.iter().enumerate() {
        state = mix(state ^ mix(tag.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN))));
    }
    let mut seed = [0u8; 32];
    for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
        state = mix(state.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN)));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    seed
}

/// Derive an independent generator for one consumer.
pub fn derive_rng(master: u64, tags: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive_seed(master, tags))
}

/// Derive a fresh master seed for a nested run (for example an inner chain).
pub fn derive_u64(master: u64, tags: &[u64]) -> u64 {
    let seed = derive_seed(master, tags);
    u64::from_le_bytes(seed[..8].try_into().expect("eight bytes"))
}
