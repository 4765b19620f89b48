//! Deterministic, counter-based seeding.
//!
//! Every random decision in a run is drawn from a stream whose seed is
//! derived from the master seed plus the coordinates of the decision
//! (purpose tag, epoch, batch, sample, view). Streams are independent of
//! evaluation order, so skipping work (e.g. not encoding the second view
//! when the contrastive weight is zero) never shifts any other stream.
//! Reproducing a run therefore needs only the master seed; no RNG state
//! is ever serialized.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Purpose tags for derived streams.
pub mod stream {
    pub const PARAM_INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const HISTOGRAM_ANCHOR: u64 = 5;
}

/// Mix the master seed with stream coordinates (splitmix64 finalizer per
/// word). Same inputs give the same seed on every platform.
pub fn derive_seed(master: u64, words: &[u64]) -> u64 {
    let mut state = master ^ 0x9e37_79b9_7f4a_7c15;
    for &w in words {
        state = state.wrapping_add(w).wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = splitmix64(state);
    }
    splitmix64(state)
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded ChaCha8 stream with the handful of draws the engine needs.
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform f64 in [0, 1) with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform f64 in [-a, a).
    pub fn symmetric_f64(&mut self, a: f64) -> f64 {
        (self.unit_f64() * 2.0 - 1.0) * a
    }

    /// Uniform integer in [0, bound) via rejection sampling (no modulo bias).
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        let bound = bound as u64;
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % bound) as usize;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below(i + 1);
            slice.swap(i, j);
        }
    }

    /// Draw an index from cumulative weights (last entry is the total).
    pub fn weighted_index(&mut self, cumulative: &[f64]) -> usize {
        let total = *cumulative.last().expect("non-empty weights");
        let x = self.unit_f64() * total;
        match cumulative.binary_search_by(|c| c.partial_cmp(&x).expect("finite weights")) {
            Ok(i) => (i + 1).min(cumulative.len() - 1),
            Err(i) => i,
        }
    }
}
