//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 keyed by the run seed (expanded with
//! SplitMix64, as `SeedableRng::seed_from_u64` does). Independent consumers
//! draw from separate named streams: the ChaCha stream id is the FNV-1a 64-bit
//! hash of the stream name. Changing one consumer's draw count therefore never
//! perturbs another's.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const STREAM_INIT: &str = "init";
pub const STREAM_SHUFFLE: &str = "shuffle";
pub const STREAM_SYNTH: &str = "synth";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn stream(seed: u64, name: &str) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(name.as_bytes()));
    rng
}
