//! Deterministic seed derivation.
//!
//! Every stochastic stage of the pipeline draws from a ChaCha stream whose
//! seed is derived from the experiment base seed plus a list of context tags
//! (stage id, round, node, ...). Results are therefore reproducible across
//! runs and independent of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags used when deriving sub-seeds. Keeping them in one place avoids
/// accidental stream collisions between pipeline stages.
pub mod stage {
    pub const SPLIT: u64 = 0x01;
    pub const PARTITION: u64 = 0x02;
    pub const GAN_INIT: u64 = 0x10;
    pub const GAN_LOCAL: u64 = 0x11;
    pub const FEDGAN_INIT: u64 = 0x12;
    pub const FEDGAN_LOCAL: u64 = 0x13;
    pub const CLS_INIT: u64 = 0x20;
    pub const CLS_ROUND: u64 = 0x21;
    pub const AUG_TRAIN: u64 = 0x30;
    pub const AUG_SAMPLE: u64 = 0x31;
    pub const SAMPLE: u64 = 0x40;
    pub const FOREST: u64 = 0x50;
    pub const EFFICACY: u64 = 0x51;
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and a list of context tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(base);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    s
}

/// Stable 64-bit hash of a label string (FNV-1a), for use as a seed tag.
pub fn hash_label(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// ChaCha stream for a derived seed.
pub fn rng_from(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
