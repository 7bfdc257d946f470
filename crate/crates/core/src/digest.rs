use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a value's canonical JSON encoding. Struct fields serialize in
/// declaration order and maps used in configs are `BTreeMap`s, so the
/// encoding is stable.
pub fn json_digest<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(sha256_hex(&bytes))
}

pub fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}
