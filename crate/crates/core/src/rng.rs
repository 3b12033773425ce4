//! Deterministic seed derivation.
//!
//! Every stochastic stage of the pipeline draws from its own named stream so
//! that adding a method or reordering stages never perturbs the draws of
//! another stage. A [`Seed`] is 32 bytes; children are derived by hashing the
//! parent together with a label, and RNGs are ChaCha12 streams keyed by the
//! seed bytes. The derivation is platform-independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// A 32-byte seed from which independent named child streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed(pub [u8; 32]);

impl Seed {
    /// Root seed for a run, derived from a user-facing integer.
    pub fn from_u64(root: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"cdm.seed.v1");
        h.update(root.to_le_bytes());
        Seed(h.finalize().into())
    }

    /// Child seed for a named stage.
    pub fn child(&self, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update([0u8]);
        h.update(label.as_bytes());
        Seed(h.finalize().into())
    }

    /// Child seed for an indexed item within a named stage.
    pub fn child_indexed(&self, label: &str, index: usize) -> Self {
        let mut h = Sha256::new();
        h.update(self.0);
        h.update([1u8]);
        h.update(label.as_bytes());
        h.update((index as u64).to_le_bytes());
        Seed(h.finalize().into())
    }

    /// ChaCha stream keyed by this seed.
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.0)
    }

    /// First eight bytes as an integer, for APIs that take a `u64` seed.
    pub fn as_u64(&self) -> u64 {
        u64::from_le_bytes(self.0[..8].try_into().unwrap())
    }
}
