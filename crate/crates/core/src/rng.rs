//! Deterministic random-number streams.
//!
//! Every stochastic stage of a campaign draws from its own ChaCha8 stream
//! whose 256-bit key is the SHA-256 digest of `(master_seed, scenario_id,
//! replication, stage)`. Streams depend only on their own key, so adding
//! replications or reordering scenarios never perturbs another run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Key of one random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamId([u8; 32]);

impl StreamId {
    /// First 64 bits of the key, handy for logging and collision checks.
    pub fn id64(&self) -> u64 {
        u64::from_le_bytes(self.0[..8].try_into().unwrap())
    }

    pub fn rng(&self) -> SimRng {
        ChaCha8Rng::from_seed(self.0)
    }
}

/// Derives the stream for one `(scenario, replication, stage)` triple.
pub fn seed_for(master_seed: u64, scenario_id: &str, rep: u64, stage: &str) -> StreamId {
    let mut h = Sha256::new();
    h.update(b"multisite-stream-v1");
    h.update(master_seed.to_le_bytes());
    // length prefixes keep ("ab","c") and ("a","bc") apart
    h.update((scenario_id.len() as u64).to_le_bytes());
    h.update(scenario_id.as_bytes());
    h.update(rep.to_le_bytes());
    h.update((stage.len() as u64).to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    StreamId(key)
}

/// Convenience for one-off seeded generators (tests, CLI `--seed`).
pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
