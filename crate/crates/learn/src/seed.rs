//! Named rng streams split from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stable 64-bit FNV-1a hash, independent of the standard library's hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for the stream `name` under `root`. Distinct names give unrelated streams.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    let mut bytes = root.to_le_bytes().to_vec();
    bytes.extend_from_slice(name.as_bytes());
    fnv1a(&bytes)
}

pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(root, name))
}
