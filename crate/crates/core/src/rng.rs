//! Seeded, splittable random streams.
//!
//! Every stochastic routine in the crate takes a [`Seed`]. Child streams are
//! derived with [`Seed::split`], so the `i`-th rollout of step `h` always sees
//! the same randomness regardless of how many other rollouts were drawn or in
//! which order workers ran them. The generator behind a seed is ChaCha8, which
//! is counter based.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seed {
    pub fn new(seed: u64) -> Self {
        Seed(seed)
    }

    /// Derives the `index`-th child stream.
    pub fn split(self, index: u64) -> Seed {
        Seed(splitmix64(splitmix64(self.0) ^ splitmix64(index.wrapping_mul(GOLDEN) ^ 0x5851_f42d)))
    }

    /// Derives a child stream from a label and an index, for call sites that
    /// need several independent families (e.g. learner vs. expert branch).
    pub fn split2(self, label: u64, index: u64) -> Seed {
        self.split(label).split(index)
    }

    pub fn rng(self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for Seed {
    fn from(v: u64) -> Self {
        Seed(v)
    }
}

/// Draws an index from a dense probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Draws an index from a sparse `(index, probability)` list.
pub fn sample_sparse<R: Rng + ?Sized>(entries: &[(usize, f64)], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in entries {
        acc += p;
        if u < acc {
            return i;
        }
    }
    entries.last().map(|&(i, _)| i).unwrap_or(0)
}
