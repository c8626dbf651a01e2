//! Seeded randomness and space-filling designs.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of `seed`. Used wherever work items are
/// processed in parallel and each needs its own reproducible draws.
pub fn stream_rng(seed: u64, stream: u64) -> SeededRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Mix two integers into a new seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(salt.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || normal(rng))
}

/// Uniform draws in `[lo, hi]^d`, one row per point.
pub fn uniform_box<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: &[f64], hi: &[f64]) -> Array2<f64> {
    let d = lo.len();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            out[[i, j]] = lo[j] + (hi[j] - lo[j]) * rng.random::<f64>();
        }
    }
    out
}

/// Random Latin hypercube on the unit cube.
pub fn latin_hypercube<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, d));
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(rng);
        for i in 0..n {
            out[[i, j]] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    out
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut k = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|&&p| p * p <= k).all(|&p| !k.is_multiple_of(p)) {
            primes.push(k);
        }
        k += 1;
    }
    primes
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton points on the unit cube with a random Cranley–Patterson shift.
///
/// The first `skip` indices are dropped; the shift makes independent pools
/// per round while keeping the low-discrepancy structure.
pub fn shifted_halton<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize, skip: u64) -> Array2<f64> {
    let primes = first_primes(d);
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            let v = radical_inverse(i as u64 + 1 + skip, primes[j]) + shift[j];
            out[[i, j]] = v - v.floor();
        }
    }
    out
}

/// Map unit-cube rows into `[lo, hi]` per column.
pub fn scale_to_box(unit: &mut Array2<f64>, lo: &[f64], hi: &[f64]) {
    for mut row in unit.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = lo[j] + (hi[j] - lo[j]) * *v;
        }
    }
}
