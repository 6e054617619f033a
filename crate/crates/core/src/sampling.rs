//! Hash-fused edge sampling.
//!
//! Edge `(u, v)` belongs to simulation `r` iff `(X_r ^ h(u, v)) < W_e`, where
//! `h` is a 31-bit edge hash, `X_r` a 31-bit per-simulation random value and
//! `W_e` the fixed-point edge probability. Sample graphs are never built.
//!
//! Frozen constructions (test vectors live in `tests/data/sampling_vectors.csv`):
//!
//! * `h(u, v)`: MurmurHash3 x64_128 with seed 0 over the 16 bytes
//!   `u.to_le_bytes() ++ v.to_le_bytes()` (both as `u64`), first 64-bit word,
//!   reduced mod 2^31.
//! * `X_r`: SplitMix64 output function at state `seed + (r + 1) * 0x9E3779B97F4A7C15`,
//!   masked to 31 bits.

use serde::{Deserialize, Serialize};

/// Largest value an edge hash or random value can take.
pub const H_MAX: u32 = (1 << 31) - 1;

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SamplingError {
    #[error("simulation count must be at least 1")]
    NoSimulations,
}

/// 31-bit edge hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeHash(pub u32);

/// Murmur3 64-bit finalizer.
#[inline]
pub fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

/// MurmurHash3 x64_128 of a single 16-byte block given as two little-endian
/// words. Returns `(h1, h2)`.
pub fn murmur3_x64_128_block(k1: u64, k2: u64, seed: u32) -> (u64, u64) {
    const C1: u64 = 0x87c3_7b91_1142_53d5;
    const C2: u64 = 0x4cf5_ad43_2745_937f;
    let mut h1 = seed as u64;
    let mut h2 = seed as u64;

    let k1 = k1.wrapping_mul(C1).rotate_left(31).wrapping_mul(C2);
    h1 ^= k1;
    h1 = h1.rotate_left(27).wrapping_add(h2).wrapping_mul(5).wrapping_add(0x52dc_e729);

    let k2 = k2.wrapping_mul(C2).rotate_left(33).wrapping_mul(C1);
    h2 ^= k2;
    h2 = h2.rotate_left(31).wrapping_add(h1).wrapping_mul(5).wrapping_add(0x3849_5ab5);

    h1 ^= 16;
    h2 ^= 16;
    h1 = h1.wrapping_add(h2);
    h2 = h2.wrapping_add(h1);
    h1 = fmix64(h1);
    h2 = fmix64(h2);
    h1 = h1.wrapping_add(h2);
    h2 = h2.wrapping_add(h1);
    (h1, h2)
}

/// Hash of the ordered pair `(u, v)`, in `[0, 2^31)`.
#[inline]
pub fn edge_hash(u: u64, v: u64) -> EdgeHash {
    let (h1, _) = murmur3_x64_128_block(u, v, 0);
    EdgeHash((h1 & H_MAX as u64) as u32)
}

/// Numerator of the per-simulation sampling probability: `x ^ h`.
#[inline]
pub fn sample_probability(x: u32, h: EdgeHash) -> u32 {
    x ^ h.0
}

/// Whether an edge with hash `h` and fixed-point weight `threshold` is live in
/// the simulation whose random value is `x`.
#[inline]
pub fn is_sampled(x: u32, h: EdgeHash, threshold: u32) -> bool {
    (x ^ h.0) < threshold
}

/// Counter-based 31-bit random value for simulation `r` under `seed`.
#[inline]
pub fn random_value(seed: u64, r: u64) -> u32 {
    let z = seed.wrapping_add(r.wrapping_add(1).wrapping_mul(SPLITMIX_GAMMA));
    let mut z = z;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z & H_MAX as u64) as u32
}

/// The per-simulation random values `X_1..X_R`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomVector {
    values: Vec<u32>,
    seed: u64,
}

impl RandomVector {
    pub fn generate(simulations: usize, seed: u64) -> Result<Self, SamplingError> {
        if simulations == 0 {
            return Err(SamplingError::NoSimulations);
        }
        let values = (0..simulations as u64).map(|r| random_value(seed, r)).collect();
        Ok(Self { values, seed })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_sorted(&self) -> bool {
        self.values.windows(2).all(|w| w[0] <= w[1])
    }

    /// Whether `(u, v)` with weight `threshold` is live in simulation `r`.
    pub fn is_sampled(&self, r: usize, u: u64, v: u64, threshold: u32) -> bool {
        is_sampled(self.values[r], edge_hash(u, v), threshold)
    }

    /// Simulation indices ordered by `(value, index)`.
    pub fn sorted_order(&self) -> Vec<u32> {
        let mut order: Vec<u32> = (0..self.values.len() as u32).collect();
        order.sort_by_key(|&i| (self.values[i as usize], i));
        order
    }
}
