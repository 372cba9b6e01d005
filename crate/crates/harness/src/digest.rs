use serde::Serialize;
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the compact JSON encoding of `value`.
pub fn json_digest<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("serializable value");
    sha256_hex(text.as_bytes())
}
