//! Seeded random streams.
//!
//! All randomness flows from explicit `u64` seeds through ChaCha8, so every
//! run is reproducible bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// FNV-1a over a byte string; stable across platforms and runs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives an independent stream from a base seed and a label.
pub fn derive(seed: u64, label: &str) -> SeededRng {
    seeded(seed ^ fnv1a(label.as_bytes()).rotate_left(17))
}
