//! Named random streams derived from one root seed.
//!
//! Every consumer of randomness asks for a stream by `(purpose, t, index)` so
//! results do not depend on call order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// `root ⊕ hash(purpose, t, index)`.
pub fn derive_seed(root: u64, purpose: &str, t: u64, index: u64) -> u64 {
    let h = splitmix64(fnv1a(purpose.as_bytes()) ^ splitmix64(t ^ splitmix64(index)));
    root ^ h
}

pub fn stream(root: u64, purpose: &str, t: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, purpose, t, index))
}
