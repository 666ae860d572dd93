//! Stable seed derivation. FNV-1a over length-delimited byte parts, fixed
//! across platforms and releases so every seeded pipeline stays
//! byte-reproducible no matter where it runs.

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

/// Hashes a sequence of byte parts into one seed. Parts are length
/// delimited, so ("ab", "c") and ("a", "bc") differ.
pub(crate) fn mix(parts: &[&[u8]]) -> u64 {
    let mut h = OFFSET;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
        h ^= part.len() as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Seed for a numbered substream (Monte-Carlo block, tournament, ...).
pub(crate) fn substream(seed: u64, index: u64) -> u64 {
    mix(&[&seed.to_le_bytes(), &index.to_le_bytes()])
}

/// Seed for a named substream (query id, doc set, ...).
pub(crate) fn named(seed: u64, name: &str) -> u64 {
    mix(&[&seed.to_le_bytes(), name.as_bytes()])
}
