//! Deterministic random streams.
//!
//! Every stream is a xoshiro256** generator whose 256-bit state is expanded
//! from a 64-bit seed with splitmix64. The draw sequence is a pure function
//! of the seed on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256StarStar;

use super::matrix::{Matrix, Vector};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct RngStream {
    inner: Xoshiro256StarStar,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    /// Private stream for worker `index` under `seed`.
    ///
    /// Streams are separated by xoshiro long jumps (2^192 draws apart), so
    /// distinct workers never overlap.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut inner = Xoshiro256StarStar::seed_from_u64(seed);
        for _ in 0..=index {
            inner.long_jump();
        }
        Self { inner }
    }

    /// Split off an independent child stream, advancing `self`.
    pub fn fork(&mut self) -> Self {
        let child = Self {
            inner: self.inner.clone(),
        };
        self.inner.jump();
        child
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Log-uniform draw in `[lo, hi]` (both positive).
    pub fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let (a, b) = (lo.ln(), hi.ln());
        (a + (b - a) * self.uniform01()).exp()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Matrix of i.i.d. `N(0, std²)` draws, filled in row-major order.
pub fn gaussian_matrix(rng: &mut RngStream, rows: usize, cols: usize, std: f64) -> Result<Matrix> {
    if !(std >= 0.0) {
        return Err(Error::contract(format!("gaussian std must be >= 0, got {std}")));
    }
    let data = (0..rows * cols).map(|_| std * rng.standard_normal()).collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn gaussian_vector(rng: &mut RngStream, len: usize, std: f64) -> Result<Vector> {
    Ok(Vector::from_vec(gaussian_matrix(rng, 1, len, std)?.into_vec()))
}

/// Matrix of i.i.d. `U[lo, hi]` draws.
pub fn uniform_matrix(rng: &mut RngStream, rows: usize, cols: usize, lo: f64, hi: f64) -> Result<Matrix> {
    if !(lo <= hi) {
        return Err(Error::contract(format!("uniform range reversed: [{lo}, {hi}]")));
    }
    let width = hi - lo;
    let data = (0..rows * cols).map(|_| lo + width * rng.uniform01()).collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn uniform_vector(rng: &mut RngStream, len: usize, lo: f64, hi: f64) -> Result<Vector> {
    Ok(Vector::from_vec(uniform_matrix(rng, 1, len, lo, hi)?.into_vec()))
}
