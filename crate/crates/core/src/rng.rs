//! Seeded, splittable random streams.
//!
//! Each stream is a ChaCha8 generator keyed by a 64-bit seed. Child streams
//! are derived by mixing the parent seed with a label, so ensemble members,
//! seeds and anchor draws never share generator state.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    counter: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            counter: 0,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of draws taken from this stream so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent child stream identified by `label`. Does not advance `self`.
    pub fn derive(&self, label: &str) -> RngStream {
        let mut h = self.seed;
        for b in label.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        RngStream::new(splitmix64(h ^ 0xA5A5_5A5A_DEAD_BEEF))
    }

    /// Child stream identified by an integer index.
    pub fn derive_index(&self, label: &str, index: u64) -> RngStream {
        self.derive(&format!("{label}#{index}"))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.counter += 1;
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.counter += 1;
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.counter += 1;
        self.inner.random_range(lo..=hi)
    }

    /// Uniform index in `[0, n)`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.counter += 1;
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        self.counter += 1;
        xs.shuffle(&mut self.inner);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
