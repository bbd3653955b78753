//! Deterministic random streams.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by the run
//! seed plus a few integers (purpose tag, step, particle, object), so results
//! do not depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_PROPOSAL: u64 = 0x70726f70;
pub(crate) const TAG_RESAMPLE: u64 = 0x72657361;
pub(crate) const TAG_PSEUDO: u64 = 0x70736575;
pub(crate) const TAG_SELECT: u64 = 0x73656c65;
pub(crate) const TAG_STEP: u64 = 0x73746570;
pub(crate) const TAG_PERSONA: u64 = 0x70657273;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of stream coordinates into a new seed.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

pub fn stream(seed: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, coords))
}
