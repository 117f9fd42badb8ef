//! Labeled, seedable random substreams.
//!
//! Every consumer of randomness (task sampling, requests, fading, exploration,
//! dropout, replay sampling) owns its own [`RngStream`]. A stream is a ChaCha8
//! generator keyed by the run seed with the ChaCha stream id derived from a
//! text label, so adding draws in one consumer never shifts another.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// FNV-1a over the label bytes; stable across platforms and releases.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Serializable position of a stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub label: String,
    /// Word position as a decimal string; JSON numbers cannot hold a u128.
    pub word_pos: String,
}

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(label_hash(label));
        Self {
            seed,
            label: label.to_string(),
            inner,
        }
    }

    /// A stream for a sub-consumer, e.g. `"policy"` -> `"policy/random"`.
    pub fn child(&self, sub: &str) -> Self {
        Self::new(self.seed, &format!("{}/{}", self.label, sub))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            label: self.label.clone(),
            word_pos: self.inner.get_word_pos().to_string(),
        }
    }

    pub fn from_state(state: &RngState) -> Result<Self, std::num::ParseIntError> {
        let pos: u128 = state.word_pos.parse()?;
        let mut s = Self::new(state.seed, &state.label);
        s.inner.set_word_pos(pos);
        Ok(s)
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
