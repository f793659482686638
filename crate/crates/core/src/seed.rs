//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value derived from one master seed:
//! `derive(seed, stream) = splitmix64(seed ^ splitmix64(stream))`.
//! Streams are independent of the order in which they are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    rng(derive(seed, stream))
}

/// Stream ids reserved for module-level consumers; item streams use their
/// index directly.
pub mod streams {
    pub const SPLIT: u64 = 0xA5A5_0000_0000_0001;
    pub const INIT: u64 = 0xA5A5_0000_0000_0002;
    pub const SHUFFLE: u64 = 0xA5A5_0000_0000_0003;
    pub const DROPOUT: u64 = 0xA5A5_0000_0000_0004;
    pub const AUGMENT: u64 = 0xA5A5_0000_0000_0005;
    pub const TRAIN: u64 = 0xA5A5_0000_0000_0006;
    pub const SYNTH: u64 = 0xA5A5_0000_0000_0007;
}
