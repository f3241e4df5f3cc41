//! Deep-transition RNN baselines.
//!
//! The transition is a stack of tanh layers: the first receives `W x`, every
//! layer receives `R_k s_{k-1} + b_k`. With `skip` set, the incoming state
//! `s₀` is added to the pre-activation of every layer (identity skip).

use super::ops;
use super::InitScheme;
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct DtLayer {
    pub r: Matrix,
    pub b: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DtRnnParams {
    /// Input weights, `n × m`, feeding the first layer only.
    pub w: Matrix,
    pub layers: Vec<DtLayer>,
    pub skip: bool,
}

#[derive(Clone, Debug)]
pub struct DtCache {
    pub x: Matrix,
    pub s0: Matrix,
    /// Output of each layer.
    pub outputs: Vec<Matrix>,
    /// Layer inputs as they entered `R_k` (masked copies, when dropout is on).
    pub s_masked: Vec<Option<Matrix>>,
    pub masks: Vec<Option<Matrix>>,
}

impl DtRnnParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, depth: usize, skip: bool) -> Result<Self> {
        if depth == 0 || input_dim == 0 || hidden_dim == 0 {
            return Err(Error::contract("DT-RNN dimensions must be >= 1"));
        }
        Ok(Self {
            w: Matrix::zeros(hidden_dim, input_dim),
            layers: (0..depth)
                .map(|_| DtLayer {
                    r: Matrix::zeros(hidden_dim, hidden_dim),
                    b: Vector::zeros(hidden_dim),
                })
                .collect(),
            skip,
        })
    }

    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        depth: usize,
        skip: bool,
        scheme: InitScheme,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut p = Self::zeros(input_dim, hidden_dim, depth, skip)?;
        p.w = scheme.input_matrix(rng, hidden_dim, input_dim)?;
        for layer in &mut p.layers {
            layer.r = scheme.recurrent_matrix(rng, hidden_dim)?;
        }
        Ok(p)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.rows()
    }

    pub(crate) fn forward_batch(&self, x: &Matrix, s0: &Matrix, hidden_masks: &[Matrix]) -> Result<(Matrix, DtCache)> {
        let depth = self.layers.len();
        let mut outputs: Vec<Matrix> = Vec::with_capacity(depth);
        let mut s_masked = Vec::with_capacity(depth);
        let mut masks = Vec::with_capacity(depth);
        for (k, layer) in self.layers.iter().enumerate() {
            let s_in = if k == 0 { s0 } else { &outputs[k - 1] };
            let mask = match hidden_masks.len() {
                0 => None,
                1 => Some(&hidden_masks[0]),
                _ => hidden_masks.get(k),
            };
            let sm = ops::masked(s_in, mask);
            let mut pre = if k == 0 {
                ops::affine(x, &self.w)
            } else {
                Matrix::zeros(x.rows(), self.hidden_dim())
            };
            ops::add_affine(&mut pre, sm.as_ref().unwrap_or(s_in), &layer.r);
            pre.add_row_broadcast(layer.b.as_slice());
            if self.skip {
                pre.axpy(1.0, s0);
            }
            let y = pre.map(f64::tanh);
            if !y.is_finite() {
                return Err(Error::NumericFault(format!("DT-RNN layer {}: non-finite state", k + 1)));
            }
            outputs.push(y);
            s_masked.push(sm);
            masks.push(mask.cloned());
        }
        let y = outputs.last().expect("depth >= 1").clone();
        Ok((
            y,
            DtCache {
                x: x.clone(),
                s0: s0.clone(),
                outputs,
                s_masked,
                masks,
            },
        ))
    }

    pub(crate) fn backward_batch(&self, c: &DtCache, dy: &Matrix, g: &mut DtRnnParams) -> (Matrix, Matrix) {
        let (b, n) = (dy.rows(), self.hidden_dim());
        let mut ds = dy.clone();
        let mut ds0_skip = Matrix::zeros(b, n);
        let mut dpre_first = Matrix::zeros(b, n);
        for k in (0..self.layers.len()).rev() {
            let y = &c.outputs[k];
            let mut dpre = y.map(|v| 1.0 - v * v);
            ops::mul_assign(&mut dpre, &ds);
            let s_in = if k == 0 { &c.s0 } else { &c.outputs[k - 1] };
            let s_mm = c.s_masked[k].as_ref().unwrap_or(s_in);
            ops::add_weight_grad(&mut g.layers[k].r, &dpre, s_mm);
            dpre.add_column_sums_into(g.layers[k].b.as_mut_slice());
            let mut ds_prev = Matrix::zeros(b, n);
            ops::add_input_grad(&mut ds_prev, &dpre, &self.layers[k].r);
            if let Some(m) = &c.masks[k] {
                ops::mul_assign(&mut ds_prev, m);
            }
            if self.skip {
                ds0_skip.axpy(1.0, &dpre);
            }
            if k == 0 {
                dpre_first = dpre;
            }
            ds = ds_prev;
        }
        ds.axpy(1.0, &ds0_skip);
        ops::add_weight_grad(&mut g.w, &dpre_first, &c.x);
        let mut dx = Matrix::zeros(b, self.w.cols());
        ops::add_input_grad(&mut dx, &dpre_first, &self.w);
        (ds, dx)
    }
}

/// One deep-transition step on a single example.
pub fn dt_step(p: &DtRnnParams, x: &Vector, y_prev: &Vector) -> Result<(Vector, DtCache)> {
    let (xr, yr) = (x.to_row(), y_prev.to_row());
    super::check_batch_dims("dt_step", &xr, &yr, p.w.cols(), p.hidden_dim())?;
    let (y, cache) = p.forward_batch(&xr, &yr, &[])?;
    Ok((y.row_vector(0), cache))
}
