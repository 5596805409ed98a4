//! Deterministic, seedable random streams.
//!
//! Every source of randomness in the crate is a [`RandomStream`] addressed by
//! a [`SeedSpec`] (master seed + stream id) and, internally, a role/index pair
//! that separates the model draw, per-step observation noise and per-step
//! selection randomness. Streams are backed by ChaCha8 keyed with the four
//! identifiers, so any stream can be constructed directly without skipping
//! ahead and distinct identifiers give statistically independent streams.
//!
//! Normal variates are produced by inverse-CDF: one 53-bit uniform per
//! variate, mapped through `stats::norm_quantile`. This choice is fixed;
//! recorded trajectories depend on it.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::stats::norm_quantile;

/// Addresses one reproducible random stream.
///
/// Identical `(master_seed, stream_id)` always reproduce the same variate
/// sequence; distinct `stream_id`s (one per Monte Carlo replication) are
/// independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    /// Same master seed, different stream id.
    pub fn with_stream(self, stream_id: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id,
        }
    }

    /// Open the raw stream for this spec.
    pub fn stream(self) -> RandomStream {
        self.substream(StreamRole::Raw, 0)
    }

    /// Open a derived substream. Substreams with distinct `(role, index)` are
    /// independent of each other and of the raw stream.
    pub fn substream(self, role: StreamRole, index: u64) -> RandomStream {
        RandomStream::from_parts(self.master_seed, self.stream_id, role as u64, index)
    }
}

/// Role tag separating the independent randomness sources of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamRole {
    /// Directly requested stream (the public draw operations).
    Raw = 0,
    /// Realization of the random function f.
    Model = 1,
    /// Observation noise; indexed by step so inserting a step does not shift
    /// later draws.
    Noise = 2,
    /// Selection randomness for conditionally independent rules; indexed by
    /// step.
    Selection = 3,
}

/// A single-consumer stream of uniforms and standard normals.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    draws: u64,
}

/// SplitMix64 finalizer; bijective, so distinct key tuples stay distinct
/// while nearby seeds decorrelate.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(spec: SeedSpec) -> Self {
        spec.stream()
    }

    fn from_parts(master_seed: u64, stream_id: u64, role: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&mix(master_seed).to_le_bytes());
        key[8..16].copy_from_slice(&mix(stream_id).to_le_bytes());
        key[16..24].copy_from_slice(&mix(role).to_le_bytes());
        key[24..32].copy_from_slice(&mix(index).to_le_bytes());
        Self {
            rng: ChaCha8Rng::from_seed(key),
            draws: 0,
        }
    }

    /// Number of variates handed out so far. The sequential driver uses this
    /// to assert that previsible rules consume no randomness.
    pub fn draws_consumed(&self) -> u64 {
        self.draws
    }

    /// One uniform variate in [0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        (self.rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// One standard normal variate via inverse-CDF. The underlying uniform is
    /// offset to the open interval (0, 1) so the quantile is always finite.
    pub fn standard_normal(&mut self) -> f64 {
        self.draws += 1;
        let u = ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0);
        norm_quantile(u)
    }

    pub fn uniforms(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.uniform()).collect()
    }

    pub fn standard_normals(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.standard_normal()).collect()
    }
}

/// `count` i.i.d. N(0,1) variates for `stream`.
pub fn draw_standard_normal(stream: SeedSpec, count: usize) -> Vec<f64> {
    assert!(count >= 1, "count must be positive");
    stream.stream().standard_normals(count)
}

/// `count` i.i.d. U[0,1) variates for `stream`.
pub fn draw_standard_uniform(stream: SeedSpec, count: usize) -> Vec<f64> {
    assert!(count >= 1, "count must be positive");
    stream.stream().uniforms(count)
}
