//! Small dense eigenvalue problems.
//!
//! `eigenvalues_dense` reduces to upper Hessenberg form with Householder
//! reflections and then runs Francis double-shift QR iterations, following
//! the EISPACK `orthes`/`hqr` pair (eigenvalues only, no balancing).

use num_complex::Complex64;

use super::matrix::{Matrix, Vector};
use super::rng::RngStream;
use crate::error::{Error, Result};

/// Complex eigenvalue / disc center.
pub type ComplexValue = Complex64;

/// Largest matrix order accepted by [`eigenvalues_dense`].
pub const MAX_EIGEN_ORDER: usize = 512;

/// Total QR sweeps allowed per unit of matrix order.
pub const QR_SWEEPS_PER_ORDER: usize = 100;

/// All eigenvalues of a square matrix, with multiplicity, in no particular
/// order.
pub fn eigenvalues_dense(a: &Matrix) -> Result<Vec<ComplexValue>> {
    if !a.is_square() {
        return Err(Error::dims(
            "eigenvalues_dense",
            "square matrix",
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    let n = a.rows();
    if n > MAX_EIGEN_ORDER {
        return Err(Error::contract(format!(
            "eigenvalues_dense supports n <= {MAX_EIGEN_ORDER}, got {n}"
        )));
    }
    if !a.is_finite() {
        return Err(Error::NumericFault("eigenvalues_dense: non-finite entry".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    hessenberg_reduce(&mut h);
    hessenberg_qr(&mut h)
}

/// In-place Householder reduction to upper Hessenberg form (similarity).
fn hessenberg_reduce(h: &mut [Vec<f64>]) {
    let n = h.len();
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i][m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i][m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[i][j];
            }
            f /= hh;
            for i in m..=high {
                h[i][j] -= f * ort[i];
            }
        }
        for row in h.iter_mut() {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * row[j];
            }
            f /= hh;
            for j in m..=high {
                row[j] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[m][m - 1] = scale * g;
    }
    for (i, row) in h.iter_mut().enumerate() {
        for v in row.iter_mut().take(i.saturating_sub(1)) {
            *v = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix.
fn hessenberg_qr(h: &mut [Vec<f64>]) -> Result<Vec<ComplexValue>> {
    let nn = h.len();
    let mut re = vec![0.0; nn];
    let mut im = vec![0.0; nn];
    let eps = f64::EPSILON;
    let max_sweeps = QR_SWEEPS_PER_ORDER * nn;

    let mut norm = 0.0;
    for (i, row) in h.iter().enumerate() {
        for v in &row[i.saturating_sub(1)..] {
            norm += v.abs();
        }
    }
    if norm == 0.0 {
        return Ok(vec![ComplexValue::new(0.0, 0.0); nn]);
    }

    let mut n = nn as isize - 1;
    let mut exshift = 0.0;
    let mut iter = 0usize;
    let mut sweeps = 0usize;
    let (mut p, mut q, mut r, mut s, mut z): (f64, f64, f64, f64, f64);
    let (mut x, mut y, mut w);

    while n >= 0 {
        let nu = n as usize;
        // Deflation: find the lowest negligible subdiagonal entry.
        let mut l = nu;
        while l > 0 {
            s = h[l - 1][l - 1].abs() + h[l][l].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[l][l - 1].abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            // One real root.
            h[nu][nu] += exshift;
            re[nu] = h[nu][nu];
            im[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            // A 2x2 block: two real roots or a conjugate pair.
            w = h[nu][nu - 1] * h[nu - 1][nu];
            p = (h[nu - 1][nu - 1] - h[nu][nu]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[nu][nu] += exshift;
            h[nu - 1][nu - 1] += exshift;
            x = h[nu][nu];
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                re[nu - 1] = x + z;
                re[nu] = if z != 0.0 { x - w / z } else { re[nu - 1] };
                im[nu - 1] = 0.0;
                im[nu] = 0.0;
            } else {
                re[nu - 1] = x + p;
                re[nu] = x + p;
                im[nu - 1] = z;
                im[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            sweeps += 1;
            if sweeps > max_sweeps {
                return Err(Error::Convergence {
                    op: "eigenvalues_dense",
                    iterations: sweeps - 1,
                    last: h[nu][nu - 1].abs(),
                });
            }
            x = h[nu][nu];
            y = h[nu - 1][nu - 1];
            w = h[nu][nu - 1] * h[nu - 1][nu];

            // Exceptional shifts to break cycles.
            if iter == 10 {
                exshift += x;
                for (i, row) in h.iter_mut().enumerate().take(nu + 1) {
                    row[i] -= x;
                }
                s = h[nu][nu - 1].abs() + h[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for (i, row) in h.iter_mut().enumerate().take(nu + 1) {
                        row[i] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;

            // Look for two consecutive small subdiagonal elements.
            let mut m = nu - 2;
            loop {
                z = h[m][m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[m + 1][m] + h[m][m + 1];
                q = h[m + 1][m + 1] - z - r - s;
                r = h[m + 2][m + 1];
                s = p.abs() + q.abs() + r.abs();
                if s != 0.0 {
                    p /= s;
                    q /= s;
                    r /= s;
                }
                if m == l {
                    break;
                }
                let lhs = h[m][m - 1].abs() * (q.abs() + r.abs());
                let rhs = eps * (p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs()));
                if lhs < rhs {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                h[i][i - 2] = 0.0;
                if i > m + 2 {
                    h[i][i - 3] = 0.0;
                }
            }

            // Double QR step on rows l..=n and columns m..=n.
            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[k][k - 1];
                    q = h[k + 1][k - 1];
                    r = if notlast { h[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s == 0.0 {
                    continue;
                }
                if k != m {
                    h[k][k - 1] = -s * x;
                } else if l != m {
                    h[k][k - 1] = -h[k][k - 1];
                }
                p += s;
                x = p / s;
                y = q / s;
                z = r / s;
                q /= p;
                r /= p;

                for j in k..=nu {
                    let mut pp = h[k][j] + q * h[k + 1][j];
                    if notlast {
                        pp += r * h[k + 2][j];
                        h[k + 2][j] -= pp * z;
                    }
                    h[k][j] -= pp * x;
                    h[k + 1][j] -= pp * y;
                }
                for row in h.iter_mut().take(nu.min(k + 3) + 1).skip(l) {
                    let mut pp = x * row[k] + y * row[k + 1];
                    if notlast {
                        pp += z * row[k + 2];
                        row[k + 2] -= pp * r;
                    }
                    row[k] -= pp;
                    row[k + 1] -= pp * q;
                }
            }
        }
    }
    Ok(re.into_iter().zip(im).map(|(a, b)| ComplexValue::new(a, b)).collect())
}

/// Largest singular value via power iteration on `AᵀA`.
///
/// Converges when the eigen-residual `‖AᵀAv − λv‖` falls below `tol·λ`.
/// The start vector is drawn from a fixed-seed stream so results are
/// reproducible.
pub fn spectral_norm(a: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::contract(format!("spectral_norm tol must be > 0, got {tol}")));
    }
    if !a.is_finite() {
        return Err(Error::NumericFault("spectral_norm: non-finite entry".into()));
    }
    let m = a.cols();
    if m == 0 || a.rows() == 0 || a.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let mut rng = RngStream::new(0x5eed_0f_5eed);
    let mut v = Vector::from_vec((0..m).map(|_| rng.standard_normal()).collect());
    let nv = v.norm2();
    v.as_mut_slice().iter_mut().for_each(|e| *e /= nv);

    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let av = a.matvec(&v)?;
        let w = a.matvec_transposed(&av)?;
        lambda = v.dot(&w)?;
        let wn = w.norm2();
        if wn == 0.0 {
            return Ok(0.0);
        }
        let resid: f64 = w
            .iter()
            .zip(v.iter())
            .map(|(wi, vi)| (wi - lambda * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if resid <= tol * lambda {
            return Ok(lambda.max(0.0).sqrt());
        }
        v = Vector::from_vec(w.iter().map(|e| e / wn).collect());
    }
    Err(Error::Convergence {
        op: "spectral_norm",
        iterations: max_iter,
        last: lambda.max(0.0).sqrt(),
    })
}

/// Spectral norm with defaults suited to the small matrices in this crate.
pub fn spectral_norm_default(a: &Matrix) -> Result<f64> {
    spectral_norm(a, 1e-12, 2_000_000)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<ComplexValue>) -> Vec<ComplexValue> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn identity_and_diagonal() {
        let ev = eigenvalues_dense(&Matrix::identity(2)).unwrap();
        assert!(ev.iter().all(|z| (z - 1.0).norm() < 1e-15));
        let ev = sorted(eigenvalues_dense(&Matrix::diag(&[2.0, 3.0, 4.0])).unwrap());
        for (z, want) in ev.iter().zip([2.0, 3.0, 4.0]) {
            assert!((z - want).norm() < 1e-14);
        }
    }

    #[test]
    fn rotation_like_pair() {
        // characteristic polynomial λ² + 2 = 0
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![-2.0, 0.0]]).unwrap();
        let ev = sorted(eigenvalues_dense(&a).unwrap());
        let r2 = 2f64.sqrt();
        assert!((ev[0] - ComplexValue::new(0.0, -r2)).norm() < 1e-14);
        assert!((ev[1] - ComplexValue::new(0.0, r2)).norm() < 1e-14);
    }

    #[test]
    fn zero_and_empty() {
        assert!(eigenvalues_dense(&Matrix::zeros(0, 0)).unwrap().is_empty());
        let ev = eigenvalues_dense(&Matrix::zeros(4, 4)).unwrap();
        assert_eq!(ev.len(), 4);
        assert!(ev.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn non_square_and_oversize_rejected() {
        assert!(eigenvalues_dense(&Matrix::zeros(2, 3)).is_err());
        assert!(matches!(
            eigenvalues_dense(&Matrix::zeros(513, 513)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn trace_is_preserved_on_larger_matrix() {
        let mut rng = RngStream::new(11);
        let a = super::super::rng::gaussian_matrix(&mut rng, 40, 40, 1.0).unwrap();
        let ev = eigenvalues_dense(&a).unwrap();
        let sum: ComplexValue = ev.iter().sum();
        assert!((sum.re - a.trace()).abs() < 1e-9);
        assert!(sum.im.abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_simple_cases() {
        assert!((spectral_norm_default(&Matrix::identity(3)).unwrap() - 1.0).abs() < 1e-12);
        let d = Matrix::diag(&[3.0, -5.0]);
        assert!((spectral_norm_default(&d).unwrap() - 5.0).abs() < 1e-10);
        assert_eq!(spectral_norm_default(&Matrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_rejects_bad_tol() {
        assert!(spectral_norm(&Matrix::identity(2), 0.0, 10).is_err());
    }

    #[test]
    fn spectral_norm_reports_non_convergence() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.999]]).unwrap();
        match spectral_norm(&a, 1e-14, 3) {
            Err(Error::Convergence { iterations, last, .. }) => {
                assert_eq!(iterations, 3);
                assert!(last > 0.9);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
