//! Counter-based random substreams.
//!
//! Every random decision in the pipeline draws from a ChaCha stream whose key
//! is derived from a master seed plus a path of integers (seed id, completion
//! index, epoch, ...). Work units therefore get the same randomness no matter
//! which worker executes them or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derive an independent generator for `path` under `master`.
pub fn substream(master: u64, path: &[u64]) -> StreamRng {
    StreamRng::from_seed(derive_key(master, path))
}

pub fn derive_key(master: u64, path: &[u64]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"synthforge/rng/v1");
    hasher.update(master.to_le_bytes());
    hasher.update((path.len() as u64).to_le_bytes());
    for p in path {
        hasher.update(p.to_le_bytes());
    }
    let out = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&out);
    key
}

/// A 64-bit value uniquely determined by `(master, path)`.
pub fn derive_u64(master: u64, path: &[u64]) -> u64 {
    let key = derive_key(master, path);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}

/// Uniform in [0, 1) from 53 high bits of a derived word.
pub fn derive_unit(master: u64, path: &[u64]) -> f64 {
    (derive_u64(master, path) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Stable 64-bit label for a string, for use inside rng paths.
pub fn label(s: &str) -> u64 {
    let out = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}

/// SplitMix64 finalizer: a fast bijective mixer for per-item coin flips
/// where a cryptographic derivation per call would be too slow.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Fold a sequence of words into one mixed word.
pub fn mix_all(seed: u64, words: impl IntoIterator<Item = u64>) -> u64 {
    words.into_iter().fold(mix64(seed), |h, w| mix64(h ^ w))
}

pub fn unit_from_bits(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
