//! Dense linear algebra, deterministic randomness and a small eigensolver.

mod eigen;
mod matrix;
mod rng;

pub use eigen::{
    eigenvalues_dense, spectral_norm, spectral_norm_default, ComplexValue, MAX_EIGEN_ORDER,
    QR_SWEEPS_PER_ORDER,
};
pub use matrix::{gemm, matmul_nt, Matrix, Trans, Vector};
pub use rng::{gaussian_matrix, gaussian_vector, uniform_matrix, uniform_vector, RngStream};


/// Logistic sigmoid, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
