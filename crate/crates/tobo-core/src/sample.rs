//! Seeded sampling utilities: per-purpose RNG streams, Latin hypercube
//! designs, and a Halton sequence for quasi-random multi-start points.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::kernels::InputDomain;

/// Purpose tags for the independent RNG streams of one run seed. Keeping the
/// streams separate lets loops that consume different amounts of randomness
/// for one purpose (e.g. super-arm initialization) stay aligned on the
/// others.
pub mod streams {
    pub const DESIGN: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const ACQUISITION: u64 = 3;
    pub const SUPERARM: u64 = 4;
    pub const FIT: u64 = 5;
    pub const PROBLEM: u64 = 6;
    pub const SPLIT: u64 = 7;
}

/// A deterministic RNG for (seed, stream) with independent streams.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Latin hypercube design of `n` points in the box, one stratum per point
/// and dimension, shuffled independently per dimension.
pub fn latin_hypercube(n: usize, domain: &InputDomain, rng: &mut ChaCha12Rng) -> Vec<Vec<f64>> {
    let d = domain.dim();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut vals: Vec<f64> = (0..n)
            .map(|k| (k as f64 + rng.random::<f64>()) / n as f64)
            .collect();
        vals.shuffle(rng);
        columns.push(vals);
    }
    (0..n)
        .map(|i| {
            (0..d)
                .map(|j| domain.lower()[j] + columns[j][i] * (domain.upper()[j] - domain.lower()[j]))
                .collect()
        })
        .collect()
}

const HALTON_PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `n` points of the Halton sequence scaled to the box, skipping the first
/// `offset` elements. Deterministic; dimensions beyond the prime table wrap.
pub fn halton(n: usize, offset: usize, domain: &InputDomain) -> Vec<Vec<f64>> {
    let d = domain.dim();
    (0..n)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let base = HALTON_PRIMES[j % HALTON_PRIMES.len()];
                    let u = radical_inverse(i + offset + 1, base);
                    domain.lower()[j] + u * (domain.upper()[j] - domain.lower()[j])
                })
                .collect()
        })
        .collect()
}

/// Splits indices `0..n` into a train/test holdout with the given test
/// fraction (at least one test point, at least one train point when n > 1).
pub fn holdout_split(n: usize, test_fraction: f64, rng: &mut ChaCha12Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut n_test = num_traits::Float::round((n as f64) * test_fraction) as usize;
    n_test = n_test.clamp(1, n.saturating_sub(1).max(1));
    let test = idx.split_off(n - n_test);
    (idx, test)
}

/// Draws i.i.d. standard normal values.
pub fn standard_normals(n: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let dist = rand_distr::StandardNormal;
    (0..n).map(|_| rand_distr::Distribution::sample(&dist, rng)).collect()
}

/// Uniformly samples a size-`k` subset of `0..t`, returned as sorted indices.
pub fn sample_subset(t: usize, k: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..t).collect();
    // Partial Fisher-Yates: the first k entries are a uniform subset.
    for i in 0..k {
        let j = rng.random_range(i..t);
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}
