//! Stream-addressed deterministic randomness.
//!
//! A [`RandomSource`] is identified by a 64-bit seed and a string stream id.
//! The pair is hashed with SHA-256 into a ChaCha8 key, so equal pairs give
//! equal draw sequences on every platform and unrelated streams are independent.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    stream_id: String,
    inner: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64, stream_id: impl Into<String>) -> Self {
        let stream_id = stream_id.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update((stream_id.len() as u64).to_le_bytes());
        hasher.update(stream_id.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self {
            seed,
            stream_id,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Independent stream `"{stream_id}/{suffix}"` under the same seed.
    pub fn substream(&self, suffix: &str) -> RandomSource {
        RandomSource::new(self.seed, format!("{}/{}", self.stream_id, suffix))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> &str {
        &self.stream_id
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
