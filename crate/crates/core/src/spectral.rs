//! Temporal Jacobians, Geršgorin discs and norm bounds.
//!
//! Jacobians here follow the convention `A = Rᵀ diag(f′)`, which is the
//! transpose of the row-per-output matrix `∂y_t/∂y_{t-1}`. Chained products
//! therefore multiply left to right in increasing time.

use crate::cells::{Activation, Cell, InitScheme, RhnParams, RnnParams};
use crate::error::{Error, Result};
use crate::numerics::{eigenvalues_dense, sigmoid, spectral_norm_default, ComplexValue, Matrix, RngStream, Vector};

/// Which pre-activation the gates and nonlinearities are evaluated at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JacobianForm<'a> {
    /// `R y_prev` only, input and bias omitted.
    RecurrentOnly,
    /// `W x + R y_prev + b`, i.e. the derivative of the actual step function.
    WithInputs { x: &'a Vector },
}

fn check_state(op: &'static str, n: usize, y_prev: &Vector) -> Result<()> {
    if y_prev.len() != n {
        return Err(Error::dims(op, n, y_prev.len()));
    }
    if !y_prev.is_finite() {
        return Err(Error::contract(format!("{op}: non-finite state")));
    }
    Ok(())
}

/// Pre-activation `R y (+ W x + b)` under `form`.
fn preactivation(w: &Matrix, r: &Matrix, b: &Vector, y_prev: &Vector, form: JacobianForm) -> Result<Vector> {
    let mut z = r.matvec(y_prev)?;
    if let JacobianForm::WithInputs { x } = form {
        let wx = w.matvec(x)?;
        for i in 0..z.len() {
            z[i] += wx[i] + b[i];
        }
    }
    Ok(z)
}

/// `Mᵀ diag(d)`.
fn transpose_times_diag(m: &Matrix, d: &Vector) -> Matrix {
    let n = m.rows();
    let mut out = Matrix::zeros(m.cols(), n);
    for i in 0..m.cols() {
        for j in 0..n {
            out[(i, j)] = m[(j, i)] * d[j];
        }
    }
    out
}

/// One-step temporal Jacobian of a standard RNN: `A = Rᵀ diag[f′(z)]`.
pub fn rnn_jacobian(p: &RnnParams, y_prev: &Vector, form: JacobianForm) -> Result<Matrix> {
    check_state("rnn_jacobian", p.hidden_dim(), y_prev)?;
    let z = preactivation(&p.w, &p.r, &p.b, y_prev, form)?;
    let act = p.activation;
    let fp = Vector::from_vec(z.iter().map(|&v| act.derivative(v)).collect());
    Ok(transpose_times_diag(&p.r, &fp))
}

/// Ordered product `A_{t1+1} · A_{t1+2} ⋯ A_{t2}`, where `jacobians[k]` is the
/// Jacobian of step `k + 1`. An empty range gives the identity.
pub fn product_jacobian(jacobians: &[Matrix], t1: usize, t2: usize) -> Result<Matrix> {
    let first = jacobians
        .first()
        .ok_or_else(|| Error::contract("product_jacobian needs at least one Jacobian"))?;
    let n = first.rows();
    if t1 > t2 || t2 > jacobians.len() {
        return Err(Error::contract(format!(
            "range ({t1}, {t2}] outside 0..={}",
            jacobians.len()
        )));
    }
    let mut acc = Matrix::identity(n);
    for (k, a) in jacobians[t1..t2].iter().enumerate() {
        if a.shape() != (n, n) {
            return Err(Error::dims("product_jacobian", format!("{n}x{n}"), format!("{:?} at step {}", a.shape(), t1 + k + 1)));
        }
        acc = acc.matmul(a)?;
    }
    Ok(acc)
}

/// Ingredients of the depth-1 RHN Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct RhnJacobianTerms {
    pub h_prime: Matrix,
    pub t_prime: Matrix,
    /// `-T′` when gates are coupled.
    pub c_prime: Matrix,
    pub h: Vector,
    pub t: Vector,
    pub c: Vector,
    pub y_prev: Vector,
}

impl RhnJacobianTerms {
    /// `A = diag(c) + H′ diag(t) + C′ diag(y_prev) + T′ diag(h)`.
    pub fn assemble(&self) -> Matrix {
        let n = self.h.len();
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = self.h_prime[(i, j)] * self.t[j]
                    + self.c_prime[(i, j)] * self.y_prev[j]
                    + self.t_prime[(i, j)] * self.h[j];
            }
            a[(i, i)] += self.c[i];
        }
        a
    }
}

/// Gate values and derivative factors of a depth-1 RHN at `y_prev`.
pub fn rhn_jacobian_terms(p: &RhnParams, y_prev: &Vector, form: JacobianForm) -> Result<RhnJacobianTerms> {
    if p.depth() != 1 {
        return Err(Error::UnsupportedDepth {
            op: "rhn_jacobian",
            depth: p.depth(),
        });
    }
    check_state("rhn_jacobian", p.hidden_dim(), y_prev)?;
    let layer = &p.layers[0];
    let z_h = preactivation(&p.w_h, &layer.r_h, &layer.b_h, y_prev, form)?;
    let z_t = preactivation(&p.w_t, &layer.r_t, &layer.b_t, y_prev, form)?;
    let h = Vector::from_vec(z_h.iter().map(|v| v.tanh()).collect());
    let t = Vector::from_vec(z_t.iter().map(|&v| sigmoid(v)).collect());
    let dh = Vector::from_vec(h.iter().map(|v| 1.0 - v * v).collect());
    let dt = Vector::from_vec(t.iter().map(|v| v * (1.0 - v)).collect());
    let h_prime = transpose_times_diag(&layer.r_h, &dh);
    let t_prime = transpose_times_diag(&layer.r_t, &dt);
    let (c, c_prime) = match (&p.w_c, &layer.r_c, &layer.b_c) {
        (Some(w_c), Some(r_c), Some(b_c)) => {
            let z_c = preactivation(w_c, r_c, b_c, y_prev, form)?;
            let c = Vector::from_vec(z_c.iter().map(|&v| sigmoid(v)).collect());
            let dc = Vector::from_vec(c.iter().map(|v| v * (1.0 - v)).collect());
            let cp = transpose_times_diag(r_c, &dc);
            (c, cp)
        }
        _ => (Vector::from_vec(t.iter().map(|v| 1.0 - v).collect()), t_prime.scaled(-1.0)),
    };
    Ok(RhnJacobianTerms {
        h_prime,
        t_prime,
        c_prime,
        h,
        t,
        c,
        y_prev: y_prev.clone(),
    })
}

/// Closed-form temporal Jacobian of a depth-1 RHN.
pub fn rhn_jacobian(p: &RhnParams, y_prev: &Vector, form: JacobianForm) -> Result<Matrix> {
    Ok(rhn_jacobian_terms(p, y_prev, form)?.assemble())
}

/// Temporal Jacobian of any cell at any depth, by reverse-mode products of
/// the per-layer derivatives (one backward pass per output unit, batched).
pub fn cell_jacobian(cell: &Cell, x: &Vector, y_prev: &Vector) -> Result<Matrix> {
    let n = cell.hidden_dim();
    check_state("cell_jacobian", n, y_prev)?;
    let xs = Matrix::repeat_row(x.as_slice(), n);
    let ys = Matrix::repeat_row(y_prev.as_slice(), n);
    let (_, cache) = cell.forward_batch(&xs, &ys, &[])?;
    let mut sink = cell.clone();
    // Row i of the result is the gradient of y_i: the numerator-layout Jacobian.
    let (ds, _) = cell.backward_batch(&cache, &Matrix::identity(n), &mut sink)?;
    Ok(ds.transpose())
}

/// Disc `{λ : |λ − center| ≤ radius}` from row `row_index` of a matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GersgorinDisc {
    pub center: ComplexValue,
    pub radius: f64,
    pub row_index: usize,
}

impl GersgorinDisc {
    /// Distance from `z` to the disc, zero inside it.
    pub fn distance(&self, z: ComplexValue) -> f64 {
        ((z - self.center).norm() - self.radius).max(0.0)
    }
}

pub fn gersgorin_discs(a: &Matrix) -> Result<Vec<GersgorinDisc>> {
    if !a.is_square() {
        return Err(Error::dims("gersgorin_discs", "square matrix", format!("{}x{}", a.rows(), a.cols())));
    }
    Ok((0..a.rows())
        .map(|i| {
            let radius = a.row(i).iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v.abs()).sum();
            GersgorinDisc {
                center: ComplexValue::new(a[(i, i)], 0.0),
                radius,
                row_index: i,
            }
        })
        .collect())
}

/// Distance from `z` to the union of `discs`.
pub fn disc_union_distance(discs: &[GersgorinDisc], z: ComplexValue) -> f64 {
    discs.iter().map(|d| d.distance(z)).fold(f64::INFINITY, f64::min)
}

/// Spectrum, discs and norm bound of a temporal Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    pub discs: Vec<GersgorinDisc>,
    pub eigenvalues: Vec<ComplexValue>,
    pub spectral_radius: f64,
    /// Largest singular value of `Rᵀ` (of `A` itself for gated cells).
    pub sigma_max: f64,
    /// Bound on `|f′|` (1 for gated cells, whose bound is `‖A‖₂`).
    pub gamma: f64,
    pub bound_gamma_sigma: f64,
    /// `‖A‖₂`.
    pub jacobian_norm: f64,
    /// `γ σ_max < 1`.
    pub vanishing: bool,
}

impl SpectrumReport {
    fn assemble(a: &Matrix, sigma_max: f64, gamma: f64) -> Result<Self> {
        let discs = gersgorin_discs(a)?;
        let eigenvalues = eigenvalues_dense(a)?;
        let spectral_radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let jacobian_norm = spectral_norm_default(a)?;
        let bound = gamma * sigma_max;
        Ok(Self {
            discs,
            eigenvalues,
            spectral_radius,
            sigma_max,
            gamma,
            bound_gamma_sigma: bound,
            jacobian_norm,
            vanishing: bound < 1.0,
        })
    }

    /// Report for an arbitrary square matrix, bounded by its own norm.
    pub fn for_matrix(a: &Matrix) -> Result<Self> {
        let sigma = spectral_norm_default(a)?;
        Self::assemble(a, sigma, 1.0)
    }

    /// Largest distance from any eigenvalue to the disc union.
    pub fn containment_gap(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|&z| disc_union_distance(&self.discs, z))
            .fold(0.0, f64::max)
    }

    pub fn mean_radius(&self) -> f64 {
        if self.discs.is_empty() {
            return 0.0;
        }
        self.discs.iter().map(|d| d.radius).sum::<f64>() / self.discs.len() as f64
    }
}

/// Recurrent-only Jacobian of a standard RNN with its norm bound `γ σ_max(Rᵀ)`.
pub fn norm_bound_report(p: &RnnParams, y_prev: &Vector) -> Result<SpectrumReport> {
    let a = rnn_jacobian(p, y_prev, JacobianForm::RecurrentOnly)?;
    let sigma = spectral_norm_default(&p.r.transpose())?;
    SpectrumReport::assemble(&a, sigma, p.activation.derivative_bound())
}

/// Recurrent initialisations contrasted in the disc picture.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegimeScheme {
    /// `R ~ N(0, std²)`: discs cluster around 0.
    SmallGaussian,
    /// `R = I` plus `N(0, std²)` off the diagonal: discs cluster around 1.
    IdentityPlusNoise,
}

/// Report for a tanh RNN freshly initialised under `scheme`, at `y_prev = 0`.
pub fn init_regime_demo(n: usize, scheme: RegimeScheme, std: f64, rng: &mut RngStream) -> Result<SpectrumReport> {
    let init = match scheme {
        RegimeScheme::SmallGaussian => InitScheme::Gaussian { std },
        RegimeScheme::IdentityPlusNoise => InitScheme::IdentityRecurrent { std },
    };
    let mut p = RnnParams::init(1, n, init, rng)?;
    p.activation = Activation::Tanh;
    norm_bound_report(&p, &Vector::zeros(n))
}
