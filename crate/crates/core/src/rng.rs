//! Deterministic random streams.
//!
//! Every consumer of randomness derives its generator from a master seed plus
//! a short list of integer keys (time index, unit, role, lane). Two different
//! key paths give statistically independent ChaCha streams, so results do not
//! depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the stream identified by `seed` and `keys`.
pub fn stream(seed: u64, keys: &[u64]) -> StreamRng {
    let mut h = splitmix64(seed);
    for (i, k) in keys.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(k.wrapping_add((i as u64 + 1) << 56)));
    }
    let mut bytes = [0u8; 32];
    let mut s = h;
    for chunk in bytes.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
