//! Seeded random streams.
//!
//! All randomness flows through ChaCha8, a counter-based generator with a
//! 64-bit seed and an independent 64-bit stream id. A `(seed, stream)` pair
//! fully determines the sequence, so independent pieces of work (blocks,
//! Monte-Carlo runs) draw from disjoint streams and may run in any order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Generator for stream `stream` of master seed `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives the master seed of Monte-Carlo run `run` from a master seed.
pub fn run_seed(master: u64, run: u64) -> u64 {
    let mut rng = stream(master, 0x5EED_0000_0000_0000 ^ run);
    rng.random()
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    // Column-major fill order is part of the reproducibility contract.
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(rng))
}

pub fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

/// Unit-norm Gaussian direction. Returns `None` only for `len == 0`.
pub fn unit_gaussian<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Option<DVector<f64>> {
    if len == 0 {
        return None;
    }
    loop {
        let v = gaussian_vector(len, rng);
        let n = v.norm();
        if n > 0.0 {
            return Some(v / n);
        }
    }
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
