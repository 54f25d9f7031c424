//! Named random sub-streams derived from a single root seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent generator for the stream `name` under `root`.
///
/// Streams with different names never share state, so adding a consumer of
/// randomness in one place cannot shift the draws seen by another.
pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(name.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}
