//! Labelled deterministic random streams.
//!
//! Every consumer of randomness owns an [`RngStream`] identified by a
//! `(seed, label)` pair. The ChaCha seed is the SHA-256 digest of the seed
//! and label, so a stream's draws depend only on that pair and are identical
//! across runs and platforms. Sub-streams are derived by extending the label.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub struct RngStream {
    seed: u64,
    label: String,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        Self { seed, label, inner: ChaCha12Rng::from_seed(digest) }
    }

    /// An independent stream labelled `"{self.label}/{sub}"`.
    ///
    /// The derived stream depends only on the seed and the combined label,
    /// never on how many values were drawn from `self`.
    pub fn derive(&self, sub: impl AsRef<str>) -> RngStream {
        RngStream::new(self.seed, format!("{}/{}", self.label, sub.as_ref()))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl RngCore for RngStream {
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

impl std::fmt::Debug for RngStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RngStream").field("seed", &self.seed).field("label", &self.label).finish()
    }
}
