//! Seed splitting.
//!
//! Every random stream in the crate is derived from one root seed plus a
//! label and an index: `seed = splitmix64(root ⊕ fnv1a(label) ⊕ splitmix64(index))`.
//! Streams with different labels or indices are independent, and a stream
//! can be recreated without replaying any other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(root ^ fnv1a(label) ^ splitmix64(index))
}

pub fn rng_for(root: u64, label: &str, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, index))
}
