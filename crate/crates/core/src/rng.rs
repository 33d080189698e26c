//! Portable seeded randomness.
//!
//! Every random draw in the crate goes through [`Rng`], a ChaCha20 stream
//! with a fixed conversion from 64-bit words to the values callers need.
//! The conversions are part of the on-disk contract (corruption logs must be
//! reproducible across platforms and dependency upgrades), so they do not
//! delegate to `rand`'s distribution machinery.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Seeded ChaCha20 generator with documented draw conversions.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha20Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    /// Independent sub-stream `stream` of the generator seeded with `seed`.
    ///
    /// Used to give every song (or assessor, or session) its own generator so
    /// that work can be split across threads without changing results.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` built from the top 53 bits of one word.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform real in `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.unit()
    }

    /// Uniform integer in `[low, high]` (inclusive), one word per draw.
    pub fn int_inclusive(&mut self, low: u32, high: u32) -> u32 {
        debug_assert!(low <= high);
        let span = u64::from(high - low) + 1;
        // multiply-high mapping: bias below 2^-32 for the spans used here
        let hi = ((u128::from(self.next_u64()) * u128::from(span)) >> 64) as u64;
        low + hi as u32
    }

    /// Index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }

    pub fn coin(&mut self) -> bool {
        self.unit() < 0.5
    }

    /// Draws an index from a discrete distribution by inverse CDF.
    ///
    /// Weights need not be normalized; zero-weight entries are never chosen.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let u = self.unit() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            last_positive = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
        last_positive
    }

    /// Fisher-Yates shuffle, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Standard normal draw (Box-Muller, cosine branch only).
    pub fn normal(&mut self) -> f64 {
        #[allow(unused_imports)]
        use num_traits::Float;
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos()
    }
}
