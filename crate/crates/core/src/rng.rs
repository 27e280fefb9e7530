//! Splittable random streams.
//!
//! A stream is addressed by `(master seed, path index, role, sub-index)`.
//! The address is hashed into a ChaCha8 key; the time-step index selects the
//! ChaCha stream (nonce). Any step of any stream can therefore be regenerated
//! without replaying the ones before it, which is what lets a full and an
//! averaged solver consume the same slow noise with different micro-stepping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StreamRole {
    SlowWiener,
    SlowJump,
    FastWiener,
    FastJump,
    FrozenWiener,
    FrozenJump,
    Audit,
    Auxiliary,
}

impl StreamRole {
    fn tag(self) -> u8 {
        match self {
            StreamRole::SlowWiener => 1,
            StreamRole::SlowJump => 2,
            StreamRole::FastWiener => 3,
            StreamRole::FastJump => 4,
            StreamRole::FrozenWiener => 5,
            StreamRole::FrozenJump => 6,
            StreamRole::Audit => 7,
            StreamRole::Auxiliary => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub path: u64,
    pub role: StreamRole,
    pub sub: u64,
}

impl StreamKey {
    pub fn new(seed: u64, path: u64, role: StreamRole) -> Self {
        StreamKey {
            seed,
            path,
            role,
            sub: 0,
        }
    }

    pub fn with_sub(mut self, sub: u64) -> Self {
        self.sub = sub;
        self
    }

    fn key_bytes(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"spde-stream-v1");
        h.update(self.seed.to_le_bytes());
        h.update(self.path.to_le_bytes());
        h.update([self.role.tag()]);
        h.update(self.sub.to_le_bytes());
        let out = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&out);
        key
    }

    pub fn stream(&self) -> StreamFactory {
        StreamFactory { key: self.key_bytes() }
    }
}

/// Cached key material for one stream address.
#[derive(Debug, Clone)]
pub struct StreamFactory {
    key: [u8; 32],
}

impl StreamFactory {
    /// Generator for time step `step`; independent of every other step.
    pub fn at(&self, step: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.key);
        r.set_stream(step);
        r
    }
}

/// Hash an arbitrary byte string to a 64-bit seed.
pub fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
}
