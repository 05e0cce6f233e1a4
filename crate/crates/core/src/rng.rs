//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed plus a 64-bit
//! stream id. ChaCha is counter based with fixed published constants, so a
//! given `(seed, stream)` yields the same draws on every platform, and the
//! exact position inside a stream can be saved and restored.
//!
//! Training code never threads one generator through a whole run. Instead it
//! derives an independent stream per purpose and counter, e.g.
//! `RngState::derive(seed, Purpose::Augment, step)`, which makes resumption
//! from any step trivially reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

/// Tag separating independent substreams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    Init = 1,
    Epoch = 2,
    Augment = 3,
    Reparam = 4,
    Probe = 5,
    Generate = 6,
    Synth = 7,
    Split = 8,
    Flow = 9,
    GradCheck = 10,
}

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Serializable position of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSnapshot {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent substream for `(purpose, index)`; `index` must stay below 2^48.
    pub fn derive(seed: u64, purpose: Purpose, index: u64) -> Self {
        debug_assert!(index < 1 << 48);
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(((purpose as u64) << 48) | index);
        Self { seed, inner }
    }

    /// Child stream seeded from this one's next draw.
    pub fn fork(&mut self) -> Self {
        Self::new(self.inner.random())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// Poisson draw with mean `rate`; a zero rate yields zero.
    pub fn poisson(&mut self, rate: f64) -> f64 {
        if rate <= 0.0 {
            return 0.0;
        }
        Poisson::new(rate)
            .expect("finite positive rate")
            .sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }

    pub fn snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            seed: self.seed,
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn restore(snap: RngSnapshot) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(snap.seed);
        inner.set_stream(snap.stream);
        inner.set_word_pos(snap.word_pos);
        Self {
            seed: snap.seed,
            inner,
        }
    }
}
