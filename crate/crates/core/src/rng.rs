//! Seeded random streams.
//!
//! A [`RandomStream`] wraps a ChaCha8 generator. The 256-bit key is expanded
//! from the user seed with SplitMix64, and independent sub-streams for
//! `(seed, replica, tag)` use ChaCha's 64-bit stream selector, so two derived
//! streams share the key but walk disjoint keystreams of 2^64 blocks each.
//! The stream selector is `mix64(replica * PHI ^ fnv1a64(tag))`.
//!
//! Gaussian and exponential variates come from the ziggurat samplers of
//! `rand_distr` 0.5 (`StandardNormal`, `Exp1`). The generator and samplers are
//! pinned per release; changing either changes every sampled sequence.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};

const PHI: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(PHI);
        chunk.copy_from_slice(&mix64(state).to_le_bytes());
    }
    key
}

fn stream_selector(replica: u64, tag: &str) -> u64 {
    mix64(replica.wrapping_mul(PHI) ^ fnv1a64(tag.as_bytes()))
}

#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    /// Root stream of a seed (replica 0, empty tag).
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, 0, "")
    }

    /// Independent sub-stream for `(seed, replica, tag)`.
    pub fn derive(seed: u64, replica: u64, tag: &str) -> Self {
        let mut rng = ChaCha8Rng::from_seed(key_from_seed(seed));
        rng.set_stream(stream_selector(replica, tag));
        Self { seed, rng }
    }

    /// Sibling sub-stream sharing this stream's seed.
    pub fn substream(&self, replica: u64, tag: &str) -> Self {
        Self::derive(self.seed, replica, tag)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Exp(1) variate.
    #[inline]
    pub fn exp1(&mut self) -> f64 {
        self.rng.sample(Exp1)
    }

    /// Exp(rate) variate, mean `1 / rate`.
    pub fn exponential(&mut self, rate: f64) -> Result<f64> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::param(format!("exponential rate must be > 0, got {rate}")));
        }
        Ok(self.exp1() / rate)
    }

    /// Brownian displacement over a time step `dt`: N(0, dt).
    pub fn brownian_increment(&mut self, dt: f64) -> Result<f64> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::param(format!("time step must be > 0, got {dt}")));
        }
        Ok(dt.sqrt() * self.standard_normal())
    }
}
