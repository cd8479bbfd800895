//! Seeded random streams.
//!
//! Every random computation in the crate draws from a ChaCha8 stream derived
//! from a root seed and a textual key (item id, estimator id, budget, ...).
//! Work units own their stream, so results do not depend on how rayon
//! schedules them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Builds the stream for `seed` and the key formed by `parts`.
pub fn substream(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut stream = [0u8; 8];
    stream.copy_from_slice(&digest[..8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(stream));
    rng
}

/// Stream for a numbered unit of work, e.g. one trial of a simulation.
pub fn indexed(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    substream(seed, &[label, &index.to_string()])
}
