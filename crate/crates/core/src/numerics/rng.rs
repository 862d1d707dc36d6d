//! Deterministic random streams.
//!
//! Every random decision in the pipeline draws from a stream derived from
//! `(seed, iteration, purpose)`, so changing the consumption pattern of one
//! stage can never perturb another stage's draws.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// A ChaCha8 stream keyed by `(seed, iteration, purpose)`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self::for_purpose(seed, 0, "root")
    }

    pub fn for_purpose(seed: u64, iteration: u64, purpose: &str) -> Self {
        let tag = fnv1a64(purpose.as_bytes());
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&iteration.to_le_bytes());
        key[16..24].copy_from_slice(&tag.to_le_bytes());
        key[24..32].copy_from_slice(&tag.wrapping_mul(0x9e37_79b9_7f4a_7c15).to_le_bytes());
        SeededRng {
            seed,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derives an independent stream sharing this stream's base seed.
    pub fn substream(&self, iteration: u64, purpose: &str) -> SeededRng {
        SeededRng::for_purpose(self.seed, iteration, purpose)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
