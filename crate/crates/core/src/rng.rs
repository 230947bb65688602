//! Seeded random streams.
//!
//! One master seed fans out into independent named streams, so that a change
//! in how often one subsystem draws (say, the adversary) leaves every other
//! subsystem's sequence untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha8Rng;

/// Derives the stream `label` from `seed`.
pub fn stream(seed: u64, label: &str) -> SimRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    SimRng::from_seed(h.finalize().into())
}

/// Derives a sub-stream, e.g. one per node.
pub fn substream(seed: u64, label: &str, index: u64) -> SimRng {
    stream(seed, &format!("{label}/{index}"))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
