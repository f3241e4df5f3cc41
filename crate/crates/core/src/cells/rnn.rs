use super::ops;
use super::{Activation, InitScheme};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, Vector};

/// Standard RNN: `y = f(W x + R y_prev + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams {
    /// Input weights, `n × m`.
    pub w: Matrix,
    /// Recurrent weights, `n × n`.
    pub r: Matrix,
    pub b: Vector,
    pub activation: Activation,
}

#[derive(Clone, Debug)]
pub struct RnnCache {
    pub x: Matrix,
    /// Previous state as it entered `R` (after any hidden-dropout mask).
    pub s_prev: Matrix,
    pub mask: Option<Matrix>,
    pub pre: Matrix,
    pub y: Matrix,
}

impl RnnParams {
    pub fn new(w: Matrix, r: Matrix, b: Vector, activation: Activation) -> Result<Self> {
        let n = w.rows();
        if r.shape() != (n, n) || b.len() != n {
            return Err(Error::dims(
                "RnnParams::new",
                format!("R {n}x{n}, b {n}"),
                format!("R {}x{}, b {}", r.rows(), r.cols(), b.len()),
            ));
        }
        Ok(Self { w, r, b, activation })
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w: Matrix::zeros(hidden_dim, input_dim),
            r: Matrix::zeros(hidden_dim, hidden_dim),
            b: Vector::zeros(hidden_dim),
            activation: Activation::Tanh,
        }
    }

    pub fn init(input_dim: usize, hidden_dim: usize, scheme: InitScheme, rng: &mut RngStream) -> Result<Self> {
        Ok(Self {
            w: scheme.input_matrix(rng, hidden_dim, input_dim)?,
            r: scheme.recurrent_matrix(rng, hidden_dim)?,
            b: Vector::zeros(hidden_dim),
            activation: Activation::Tanh,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub(crate) fn forward_batch(&self, x: &Matrix, s0: &Matrix, mask: Option<&Matrix>) -> Result<(Matrix, RnnCache)> {
        let s_prev = ops::masked(s0, mask).unwrap_or_else(|| s0.clone());
        let mut pre = ops::affine(x, &self.w);
        ops::add_affine(&mut pre, &s_prev, &self.r);
        pre.add_row_broadcast(self.b.as_slice());
        let act = self.activation;
        let y = pre.map(|v| act.apply(v));
        if !y.is_finite() {
            return Err(Error::NumericFault("RNN step produced a non-finite state".into()));
        }
        let cache = RnnCache {
            x: x.clone(),
            s_prev,
            mask: mask.cloned(),
            pre,
            y: y.clone(),
        };
        Ok((y, cache))
    }

    pub(crate) fn backward_batch(&self, c: &RnnCache, dy: &Matrix, g: &mut RnnParams) -> (Matrix, Matrix) {
        let act = self.activation;
        let mut dpre = c.y.map(|y| act.derivative_from_output(y));
        ops::mul_assign(&mut dpre, dy);
        ops::add_weight_grad(&mut g.w, &dpre, &c.x);
        ops::add_weight_grad(&mut g.r, &dpre, &c.s_prev);
        dpre.add_column_sums_into(g.b.as_mut_slice());
        let mut ds = Matrix::zeros(dy.rows(), self.hidden_dim());
        ops::add_input_grad(&mut ds, &dpre, &self.r);
        if let Some(m) = &c.mask {
            ops::mul_assign(&mut ds, m);
        }
        let mut dx = Matrix::zeros(dy.rows(), self.w.cols());
        ops::add_input_grad(&mut dx, &dpre, &self.w);
        (ds, dx)
    }
}

/// One standard-RNN step on a single example.
pub fn rnn_step(p: &RnnParams, x: &Vector, y_prev: &Vector) -> Result<(Vector, RnnCache)> {
    super::check_batch_dims("rnn_step", &x.to_row(), &y_prev.to_row(), p.w.cols(), p.hidden_dim())?;
    let (y, cache) = p.forward_batch(&x.to_row(), &y_prev.to_row(), None)?;
    Ok((y.row_vector(0), cache))
}
