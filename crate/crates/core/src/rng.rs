//! Seedable, portable pseudo-random stream used by every splitter and
//! by the synthetic cohort generator.
//!
//! The generator is xoshiro256** seeded through SplitMix64
//! (`seed_from_u64`), both fully specified by their published reference
//! implementations. Index draws use Lemire's widening-multiply method
//! with rejection, and shuffles are Fisher-Yates from the top index down,
//! so a reimplementation in another language that follows these three
//! descriptions reproduces every assignment bit for bit. OS entropy is
//! never consulted.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone)]
pub struct SplitRng {
    inner: Xoshiro256StarStar,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Derives an independent stream for a sub-task (epoch, patient, ...).
    ///
    /// The child seed mixes the parent seed and the tag through one
    /// SplitMix64 finalizer step, so streams for different tags do not
    /// overlap in practice and do not depend on draw order.
    pub fn derive(seed: u64, tag: u64) -> Self {
        Self::new(splitmix64(seed ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `0..bound`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below() needs a positive bound");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = (self.next_u64() as u128) * (bound as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Uniform real in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Access to the raw generator for `rand_distr` samplers.
    pub fn as_rng(&mut self) -> &mut Xoshiro256StarStar {
        &mut self.inner
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
