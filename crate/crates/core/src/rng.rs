//! Seeded random streams.
//!
//! All randomness is explicit: callers pass a `SeededRng` and derive child
//! seeds through a stable hash, never through platform hash order.

use rand::SeedableRng;
use sha2::{Digest, Sha256};

pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Stable 64-bit seed from a root seed and labelled parts.
///
/// Parts are length-prefixed so `("ab", "c")` and `("a", "bc")` differ.
pub fn derive_seed(root: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}
