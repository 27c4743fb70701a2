//! Seed derivation. Every random stream in the crate is keyed by
//! `(base seed, stream name, index)` so independent consumers never share
//! draws and reordering one consumer cannot perturb another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    splitmix(splitmix(seed ^ fnv1a(stream)).wrapping_add(splitmix(index)))
}

pub fn stream(seed: u64, name: &str, index: u64) -> LabRng {
    LabRng::seed_from_u64(derive_seed(seed, name, index))
}
