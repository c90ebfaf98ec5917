//! Counter-based random stream derivation.
//!
//! Every episode gets its own ChaCha stream keyed by `(master_seed, cell_tag)`
//! and selected by the episode index, so results never depend on how episodes
//! are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit tag of a serializable value (SHA-256 of its JSON form).
pub fn stable_tag<T: Serialize + ?Sized>(value: &T) -> u64 {
    let json = serde_json::to_vec(value).expect("tag values serialize");
    let digest = Sha256::digest(&json);
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Stream `index` of the family keyed by `(master_seed, tag)`.
pub fn stream(master_seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let key = mix64(master_seed ^ mix64(tag));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
