//! Stage-seed derivation and the crate's RNG type.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Portable, seedable generator used for every stochastic step.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed from a master seed and a stage label.
///
/// FNV-1a over the label, folded with the master seed and finished with the
/// splitmix64 mixer. Stable across platforms and compiler versions.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in master.to_le_bytes().iter().chain(stage.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
