//! Fixed, portable hash primitives.
//!
//! Every constant in this module is part of the on-disk and cross-language
//! contract: changing one changes tokenization, green lists and every seeded
//! stream derived from them.

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer. Bijective on u64.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a parent seed and a label. Used to split one
/// experiment seed into independent streams (corpus, responder, queries...).
#[inline]
pub fn derive(seed: u64, label: u64) -> u64 {
    mix64(seed ^ mix64(label.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Derive a seed from a parent seed and a string label.
pub fn derive_str(seed: u64, label: &str) -> u64 {
    derive(seed, fnv1a64(label.as_bytes()))
}

/// Order-sensitive digest of a token slice.
pub fn hash_tokens(seed: u64, tokens: &[u32]) -> u64 {
    tokens.iter().fold(mix64(seed ^ tokens.len() as u64), |acc, &t| {
        mix64(acc ^ u64::from(t).wrapping_mul(0x9e37_79b9_7f4a_7c15))
    })
}
