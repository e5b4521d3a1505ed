//! Seed derivation. Every random stream in the toolkit is a ChaCha8 generator
//! keyed by a root seed and a list of stream labels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives a named substream seed from `root`.
pub fn substream(root: u64, name: &str) -> u64 {
    splitmix(root ^ splitmix(fnv1a(name.as_bytes())))
}

/// Derives a seed from `root` and a sequence of integer keys.
pub fn keyed(root: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix(root), |acc, &k| splitmix(acc ^ splitmix(k.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
