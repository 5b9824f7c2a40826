//! Randomness sources for key and nonce generation.
//!
//! Every random draw in the crate goes through an [`Entropy`] and a purpose
//! label. A seeded entropy makes whole simulations reproducible: the same
//! seed and label always produce the same RNG stream, so a terminal session
//! and a scenario run built from one seed emit identical wire bytes.
//!
//! Key material and nonces (IVs, OAEP padding) come from separate streams so
//! a caller can keep a party's keys fixed while varying nonces per run.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Source {
    Os,
    Seeded(#[serde(with = "hex_seed")] [u8; 32]),
}

impl Source {
    fn derive(&self, label: &str) -> Source {
        match self {
            Source::Os => Source::Os,
            Source::Seeded(seed) => Source::Seeded(mix(seed, label)),
        }
    }

    fn rng(&self, label: &str) -> (ChaCha20Rng, Option<[u8; 32]>) {
        match self {
            Source::Os => (ChaCha20Rng::from_entropy(), None),
            Source::Seeded(seed) => {
                let derived = mix(seed, label);
                (ChaCha20Rng::from_seed(derived), Some(derived))
            }
        }
    }
}

fn mix(seed: &[u8; 32], label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed);
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// A pair of randomness streams: one for long-lived keys, one for nonces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entropy {
    keys: Source,
    nonces: Source,
}

impl Entropy {
    /// Operating-system randomness for both streams.
    pub fn os() -> Self {
        Entropy {
            keys: Source::Os,
            nonces: Source::Os,
        }
    }

    /// Deterministic entropy for tests and demo mode.
    pub fn seeded(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"cryptolab-seed");
        h.update(seed.to_le_bytes());
        Self::from_seed_bytes(h.finalize().into())
    }

    pub fn from_seed_bytes(seed: [u8; 32]) -> Self {
        let root = Source::Seeded(seed);
        Entropy {
            keys: root.derive("keys"),
            nonces: root.derive("nonces"),
        }
    }

    /// A fresh random seed, so the result is unpredictable but can still be
    /// persisted and replayed.
    pub fn random_seeded() -> Self {
        let mut seed = [0u8; 32];
        rand::RngCore::fill_bytes(&mut ChaCha20Rng::from_entropy(), &mut seed);
        Self::from_seed_bytes(seed)
    }

    pub fn is_seeded(&self) -> bool {
        matches!(self.keys, Source::Seeded(_))
    }

    /// Sub-entropy for an independent purpose; both streams change.
    pub fn derive(&self, label: &str) -> Self {
        Entropy {
            keys: self.keys.derive(label),
            nonces: self.nonces.derive(label),
        }
    }

    /// Same keys, different nonces.
    pub fn with_nonce_context(&self, label: &str) -> Self {
        Entropy {
            keys: self.keys.clone(),
            nonces: self.nonces.derive(label),
        }
    }

    pub fn key_rng(&self, label: &str) -> ChaCha20Rng {
        self.keys.rng(label).0
    }

    /// Key RNG plus the derived seed when deterministic (used for memoizing
    /// expensive key generation).
    pub(crate) fn key_rng_with_seed(&self, label: &str) -> (ChaCha20Rng, Option<[u8; 32]>) {
        self.keys.rng(label)
    }

    pub fn nonce_rng(&self, label: &str) -> ChaCha20Rng {
        self.nonces.rng(label).0
    }
}

mod hex_seed {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(seed))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(D::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| D::Error::custom("seed must be 32 bytes"))
    }
}
