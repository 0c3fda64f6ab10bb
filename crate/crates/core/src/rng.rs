//! Derived random streams.
//!
//! Every random decision in a run is drawn from a stream keyed by the run
//! seed, the owning agent, the step and a purpose tag. Streams never depend
//! on the order in which agents are visited, so fanning agents out across
//! threads cannot change a result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// What a derived stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Activation,
    Feed,
    Refresh,
    Treatment,
    Population,
    Network,
    Backend,
    Profile,
}

impl Purpose {
    fn tag(self) -> &'static [u8] {
        match self {
            Purpose::Activation => b"activation",
            Purpose::Feed => b"feed",
            Purpose::Refresh => b"refresh",
            Purpose::Treatment => b"treatment",
            Purpose::Population => b"population",
            Purpose::Network => b"network",
            Purpose::Backend => b"backend",
            Purpose::Profile => b"profile",
        }
    }
}

/// Stream for `(seed, owner, step, purpose)`.
pub fn stream(seed: u64, owner: u64, step: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(owner.to_le_bytes());
    h.update(step.to_le_bytes());
    h.update(purpose.tag());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Stream keyed by arbitrary bytes, e.g. a prompt text.
pub fn stream_from_bytes(seed: u64, bytes: &[u8], purpose: Purpose) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.tag());
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Hex SHA-256 of a byte slice.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
