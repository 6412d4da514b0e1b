//! Deterministic seed derivation. Every random stream in a study is keyed by
//! a root seed plus a path of tags, so runs are reproducible and paired
//! comparisons can share noise draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a tag into a seed.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix(seed ^ splitmix(tag.wrapping_add(0x51_7C_C1_B7)))
}

/// Mixes a string tag into a seed (FNV-1a over the bytes, then `derive`).
pub fn derive_str(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive(seed, h)
}

pub fn derive_path(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &t| derive(s, t))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
