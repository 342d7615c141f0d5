//! 64-bit FNV-1a, used both for token hashing and for config digests.

use serde::Serialize;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// FNV-1a over the compact JSON encoding of `value`. Struct fields serialize
/// in declaration order, so the encoding is canonical for our config types.
pub fn config_digest<T: Serialize>(value: &T) -> u64 {
    let json = serde_json::to_vec(value).expect("config types always serialize");
    fnv1a64(&json)
}
