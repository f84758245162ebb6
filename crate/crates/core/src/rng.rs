//! Seeded random streams.
//!
//! Every trial in an experiment owns its own generator. Trial seeds are
//! derived from the master seed with a counter scheme: the tuple
//! `(master, stream, index)` is folded through SplitMix64 so that nearby
//! counters yield unrelated streams. Results therefore do not depend on the
//! order in which trials are executed.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for trial `index` of stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            sigma * g
        })
        .collect::<Vec<f64>>()
}

/// Uniformly random support of size `k` in `0..n`, sorted ascending.
pub fn random_support<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut s = index::sample(rng, n, k).into_vec();
    s.sort_unstable();
    s
}

/// `k`-sparse vector with standard normal entries on a uniform support.
pub fn sparse_gaussian<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for i in random_support(rng, n, k) {
        x[i] = StandardNormal.sample(rng);
    }
    x
}
