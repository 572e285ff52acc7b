//! Deterministic random streams.
//!
//! A [`RandomStream`] is a root seed plus a domain label. Draws never come
//! from the root directly: every consumer asks for a [`Substream`] keyed by
//! `(step, slot)`, which is a ChaCha8 generator whose key is derived from
//! `(seed, domain, step, slot)`. Two substreams with different keys are
//! independent, and the value sequence of a substream depends only on its
//! key, never on how many other substreams were drawn before it or on which
//! thread asked for it.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Root of a family of keyed substreams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RandomStream {
    seed: u64,
    domain: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, domain: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A stream for a separate purpose (noise, sampling, option binding...).
    ///
    /// Derivation is by hashing, so `derive("a").derive("b")` and
    /// `derive("b").derive("a")` are different streams.
    pub fn derive(&self, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.domain.to_le_bytes());
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        Self {
            seed: self.seed,
            domain: u64::from_le_bytes(word),
        }
    }

    pub fn substream(&self, step: u64, slot: u64) -> Substream {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.domain.to_le_bytes());
        key[16..24].copy_from_slice(&step.to_le_bytes());
        key[24..].copy_from_slice(&slot.to_le_bytes());
        Substream {
            inner: ChaCha8Rng::from_seed(key),
        }
    }
}

/// Single-consumer generator for one `(step, slot)` key.
#[derive(Clone, Debug)]
pub struct Substream {
    inner: ChaCha8Rng,
}

impl Substream {
    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for Substream {
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
