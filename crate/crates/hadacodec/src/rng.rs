//! Seed derivation. Every random consumer gets its own stream derived from
//! the run seed and a purpose string, so adding a consumer never shifts the
//! numbers another consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a; stable across platforms and compiler versions.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mix an ordered list of words into one seed.
pub fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3u64, |acc, &w| {
        splitmix64(acc ^ splitmix64(w))
    })
}

pub fn stream_seed(seed: u64, purpose: &str) -> u64 {
    hash_words(&[seed, fnv1a(purpose.as_bytes())])
}

pub fn stream(seed: u64, purpose: &str) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(seed, purpose))
}

/// Seed for one camera sample. Identical for every shading mode and pass.
pub fn pixel_seed(seed: u64, x: u32, y: u32, sample: u32) -> u64 {
    hash_words(&[seed, u64::from(x), u64::from(y), u64::from(sample)])
}
