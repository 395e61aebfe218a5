//! Counter-based seeding.
//!
//! Every random stream is identified by a `(seed, stream, index)` triple and
//! turned into an independent ChaCha generator, so the draws a sample receives
//! never depend on scheduling or on how many workers are running.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream identifiers so unrelated consumers never share draws.
pub mod stream {
    pub const AUGMENT: u64 = 0x6175_676d;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const SPLIT: u64 = 0x7370_6c74;
    pub const INIT: u64 = 0x696e_6974;
    pub const SYNTH_SCENE: u64 = 0x7363_656e;
    pub const SYNTH_PRODUCER: u64 = 0x7072_6f64;
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a `(seed, stream, a, b)` tuple.
pub fn key(seed: u64, stream: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(mix64(seed ^ mix64(stream)) ^ a) ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Generator for stream `stream`, epoch/outer counter `a`, item `b`.
pub fn rng_for(seed: u64, stream: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, stream, a, b))
}
