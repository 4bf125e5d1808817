//! Seeded random streams. Every consumer draws from a named stream so that
//! changing one part of a run leaves the others' randomness untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SCENE: &str = "scene";
pub const STREAM_OCCLUDER: &str = "occluder";
pub const STREAM_INIT: &str = "init";
pub const STREAM_TRAIN: &str = "train";

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// The generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(stream.as_bytes()));
    rng
}

/// Derives a child seed, e.g. one per scene index.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(label.as_bytes());
    bytes.extend_from_slice(&index.to_le_bytes());
    fnv1a(&bytes)
}
