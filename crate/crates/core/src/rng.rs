//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, stream)`: ChaCha8 keyed by the seed,
//! with the 64-bit stream id selecting an independent keystream. Streams
//! are derived from structured coordinates (episode, group, individual,
//! ...) so the draws an individual sees never depend on evaluation order
//! or thread count.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a coordinate tuple into a stream id.
pub fn stream_id(coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(0x6A09_E667_F3BC_C908u64, |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn for_coords(seed: u64, coords: &[u64]) -> Self {
        Self::new(seed, stream_id(coords))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * INV_2_53
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Inverse-CDF draw from a probability vector. Rounding slack in the
    /// tail falls on the last index with positive mass.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = i;
                if u < acc {
                    return i;
                }
            }
        }
        last
    }
}
