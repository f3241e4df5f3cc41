//! Recurrent Highway Network cell.
//!
//! One time step stacks `L` highway layers on the recurrent path. With
//! `s₀ = y_prev`, layer `ℓ` computes
//!
//! ```text
//! h_ℓ = tanh(W_H x·[ℓ=1] + R_Hℓ s_{ℓ-1} + b_Hℓ)
//! t_ℓ = σ(W_T x·[ℓ=1] + R_Tℓ s_{ℓ-1} + b_Tℓ)
//! c_ℓ = σ(W_C x·[ℓ=1] + R_Cℓ s_{ℓ-1} + b_Cℓ)   or   1 − t_ℓ when coupled
//! s_ℓ = h_ℓ ⊙ t_ℓ + s_{ℓ-1} ⊙ c_ℓ
//! ```
//!
//! and the step output is `y = s_L`. The `[ℓ=1]` indicator becomes 1 for
//! every layer when `input_first_layer_only` is off; the input weights are
//! shared across layers in that case.

use super::ops;
use super::InitScheme;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix, RngStream, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct RhnConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
    pub coupled_gates: bool,
    pub input_first_layer_only: bool,
    pub transform_bias_init: f64,
}

impl RhnConfig {
    pub fn new(input_dim: usize, hidden_dim: usize, depth: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            depth,
            coupled_gates: true,
            input_first_layer_only: true,
            transform_bias_init: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::contract(format!("RHN dimensions must be >= 1: {self:?}")));
        }
        Ok(())
    }

    fn feeds_input(&self, layer: usize) -> bool {
        layer == 0 || !self.input_first_layer_only
    }
}

/// Recurrent weights of one highway layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RhnLayer {
    pub r_h: Matrix,
    pub r_t: Matrix,
    /// Absent when gates are coupled.
    pub r_c: Option<Matrix>,
    pub b_h: Vector,
    pub b_t: Vector,
    pub b_c: Option<Vector>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RhnParams {
    pub config: RhnConfig,
    pub w_h: Matrix,
    pub w_t: Matrix,
    pub w_c: Option<Matrix>,
    pub layers: Vec<RhnLayer>,
}

/// Activations of one highway layer for a batch.
#[derive(Clone, Debug)]
pub struct RhnLayerCache {
    /// Layer output `s_ℓ`.
    pub s: Matrix,
    pub h: Matrix,
    pub t: Matrix,
    pub c: Matrix,
    /// `s_{ℓ-1}` after the hidden-dropout mask, when one was applied.
    pub s_masked: Option<Matrix>,
    pub mask: Option<Matrix>,
}

/// Per-step cache: the incoming state plus every layer's activations.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub x: Matrix,
    pub s0: Matrix,
    pub layers: Vec<RhnLayerCache>,
}

impl StepCache {
    /// Input state of layer `l` (0-based), i.e. `s_{l}` in 1-based notation.
    pub fn layer_input(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.s0
        } else {
            &self.layers[l - 1].s
        }
    }

    pub fn output(&self) -> &Matrix {
        &self.layers.last().expect("RHN has at least one layer").s
    }
}

impl RhnParams {
    /// All weights and biases zero except transform biases, which are set to
    /// `config.transform_bias_init`.
    pub fn zeros(config: RhnConfig) -> Result<Self> {
        config.validate()?;
        let (m, n) = (config.input_dim, config.hidden_dim);
        let coupled = config.coupled_gates;
        let layers = (0..config.depth)
            .map(|_| RhnLayer {
                r_h: Matrix::zeros(n, n),
                r_t: Matrix::zeros(n, n),
                r_c: (!coupled).then(|| Matrix::zeros(n, n)),
                b_h: Vector::zeros(n),
                b_t: Vector::filled(n, config.transform_bias_init),
                b_c: (!coupled).then(|| Vector::zeros(n)),
            })
            .collect();
        Ok(Self {
            w_h: Matrix::zeros(n, m),
            w_t: Matrix::zeros(n, m),
            w_c: (!coupled).then(|| Matrix::zeros(n, m)),
            layers,
            config,
        })
    }

    pub fn init(config: RhnConfig, scheme: InitScheme, rng: &mut RngStream) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let (m, n) = (p.config.input_dim, p.config.hidden_dim);
        p.w_h = scheme.input_matrix(rng, n, m)?;
        p.w_t = scheme.input_matrix(rng, n, m)?;
        if p.w_c.is_some() {
            p.w_c = Some(scheme.input_matrix(rng, n, m)?);
        }
        for layer in &mut p.layers {
            layer.r_h = scheme.recurrent_matrix(rng, n)?;
            layer.r_t = scheme.recurrent_matrix(rng, n)?;
            if layer.r_c.is_some() {
                layer.r_c = Some(scheme.recurrent_matrix(rng, n)?);
            }
        }
        Ok(p)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn hidden_mask<'a>(masks: &'a [Matrix], layer: usize) -> Option<&'a Matrix> {
        match masks.len() {
            0 => None,
            1 => Some(&masks[0]),
            _ => masks.get(layer),
        }
    }

    pub(crate) fn forward_batch(&self, x: &Matrix, s0: &Matrix, hidden_masks: &[Matrix]) -> Result<(Matrix, StepCache)> {
        let cfg = &self.config;
        let coupled = cfg.coupled_gates;
        let xw_h = ops::affine(x, &self.w_h);
        let xw_t = ops::affine(x, &self.w_t);
        let xw_c = self.w_c.as_ref().map(|w| ops::affine(x, w));
        let zeros = || Matrix::zeros(x.rows(), cfg.hidden_dim);

        let mut layers: Vec<RhnLayerCache> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let s_in = if l == 0 { s0 } else { &layers[l - 1].s };
            let mask = Self::hidden_mask(hidden_masks, l);
            let s_masked = ops::masked(s_in, mask);
            let s_mm = s_masked.as_ref().unwrap_or(s_in);
            let feeds = cfg.feeds_input(l);

            let mut pre_h = if feeds { xw_h.clone() } else { zeros() };
            ops::add_affine(&mut pre_h, s_mm, &layer.r_h);
            pre_h.add_row_broadcast(layer.b_h.as_slice());
            let h = pre_h.map(f64::tanh);

            let mut pre_t = if feeds { xw_t.clone() } else { zeros() };
            ops::add_affine(&mut pre_t, s_mm, &layer.r_t);
            pre_t.add_row_broadcast(layer.b_t.as_slice());
            let t = pre_t.map(sigmoid);

            let c = if coupled {
                t.map(|v| 1.0 - v)
            } else {
                let (r_c, b_c) = (layer.r_c.as_ref().unwrap(), layer.b_c.as_ref().unwrap());
                let mut pre_c = match (&xw_c, feeds) {
                    (Some(xc), true) => xc.clone(),
                    _ => zeros(),
                };
                ops::add_affine(&mut pre_c, s_mm, r_c);
                pre_c.add_row_broadcast(b_c.as_slice());
                pre_c.map(sigmoid)
            };

            let mut s = h.hadamard(&t);
            for ((o, sv), cv) in s.as_mut_slice().iter_mut().zip(s_in.as_slice()).zip(c.as_slice()) {
                *o += sv * cv;
            }
            if !s.is_finite() {
                return Err(Error::NumericFault(format!("RHN layer {}: non-finite state", l + 1)));
            }
            layers.push(RhnLayerCache {
                s,
                h,
                t,
                c,
                s_masked,
                mask: mask.cloned(),
            });
        }
        let y = layers.last().expect("depth >= 1").s.clone();
        Ok((
            y,
            StepCache {
                x: x.clone(),
                s0: s0.clone(),
                layers,
            },
        ))
    }

    pub(crate) fn backward_batch(&self, cache: &StepCache, dy: &Matrix, g: &mut RhnParams) -> (Matrix, Matrix) {
        let cfg = &self.config;
        let coupled = cfg.coupled_gates;
        let (b, n) = (dy.rows(), cfg.hidden_dim);
        // Gradients of the input pre-activations, summed over layers that see x.
        let mut acc_h = Matrix::zeros(b, n);
        let mut acc_t = Matrix::zeros(b, n);
        let mut acc_c = (!coupled).then(|| Matrix::zeros(b, n));

        let mut ds = dy.clone();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let lc = &cache.layers[l];
            let gl = &mut g.layers[l];
            let s_in = cache.layer_input(l);

            let len = ds.as_slice().len();
            let mut dpre_h = Matrix::zeros(b, n);
            let mut dpre_t = Matrix::zeros(b, n);
            let mut dpre_c = (!coupled).then(|| Matrix::zeros(b, n));
            let mut ds_prev = Matrix::zeros(b, n);
            {
                let (dsv, h, t, c, sv) = (
                    ds.as_slice(),
                    lc.h.as_slice(),
                    lc.t.as_slice(),
                    lc.c.as_slice(),
                    s_in.as_slice(),
                );
                let dh_out = dpre_h.as_mut_slice();
                let dt_out = dpre_t.as_mut_slice();
                let dsp = ds_prev.as_mut_slice();
                match dpre_c.as_mut() {
                    None => {
                        for i in 0..len {
                            let d = dsv[i];
                            dh_out[i] = d * t[i] * (1.0 - h[i] * h[i]);
                            // c = 1 - t, so the carry path feeds back with a minus sign.
                            dt_out[i] = d * (h[i] - sv[i]) * t[i] * (1.0 - t[i]);
                            dsp[i] = d * c[i];
                        }
                    }
                    Some(dc) => {
                        let dc_out = dc.as_mut_slice();
                        for i in 0..len {
                            let d = dsv[i];
                            dh_out[i] = d * t[i] * (1.0 - h[i] * h[i]);
                            dt_out[i] = d * h[i] * t[i] * (1.0 - t[i]);
                            dc_out[i] = d * sv[i] * c[i] * (1.0 - c[i]);
                            dsp[i] = d * c[i];
                        }
                    }
                }
            }

            let s_mm = lc.s_masked.as_ref().unwrap_or(s_in);
            ops::add_weight_grad(&mut gl.r_h, &dpre_h, s_mm);
            ops::add_weight_grad(&mut gl.r_t, &dpre_t, s_mm);
            dpre_h.add_column_sums_into(gl.b_h.as_mut_slice());
            dpre_t.add_column_sums_into(gl.b_t.as_mut_slice());

            let mut ds_mm = Matrix::zeros(b, n);
            ops::add_input_grad(&mut ds_mm, &dpre_h, &layer.r_h);
            ops::add_input_grad(&mut ds_mm, &dpre_t, &layer.r_t);
            if let Some(dc) = &dpre_c {
                ops::add_weight_grad(gl.r_c.as_mut().unwrap(), dc, s_mm);
                dc.add_column_sums_into(gl.b_c.as_mut().unwrap().as_mut_slice());
                ops::add_input_grad(&mut ds_mm, dc, layer.r_c.as_ref().unwrap());
            }
            if let Some(mask) = &lc.mask {
                ops::mul_assign(&mut ds_mm, mask);
            }
            ds_prev.axpy(1.0, &ds_mm);

            if cfg.feeds_input(l) {
                acc_h.axpy(1.0, &dpre_h);
                acc_t.axpy(1.0, &dpre_t);
                if let (Some(acc), Some(dc)) = (acc_c.as_mut(), &dpre_c) {
                    acc.axpy(1.0, dc);
                }
            }
            ds = ds_prev;
        }

        let x = &cache.x;
        ops::add_weight_grad(&mut g.w_h, &acc_h, x);
        ops::add_weight_grad(&mut g.w_t, &acc_t, x);
        let mut dx = Matrix::zeros(b, cfg.input_dim);
        ops::add_input_grad(&mut dx, &acc_h, &self.w_h);
        ops::add_input_grad(&mut dx, &acc_t, &self.w_t);
        if let (Some(acc), Some(w_c)) = (&acc_c, &self.w_c) {
            ops::add_weight_grad(g.w_c.as_mut().unwrap(), acc, x);
            ops::add_input_grad(&mut dx, acc, w_c);
        }
        (ds, dx)
    }
}

/// One RHN step on a single example.
pub fn rhn_step(p: &RhnParams, x: &Vector, y_prev: &Vector) -> Result<(Vector, StepCache)> {
    let (xr, yr) = (x.to_row(), y_prev.to_row());
    super::check_batch_dims("rhn_step", &xr, &yr, p.config.input_dim, p.config.hidden_dim)?;
    let (y, cache) = p.forward_batch(&xr, &yr, &[])?;
    Ok((y.row_vector(0), cache))
}

/// Copy of `p` with every transform-gate bias of `layer` (1-based) set to
/// `beta`. A large negative `beta` turns the layer into a pure carry.
pub fn set_lesion_bias(p: &RhnParams, layer: usize, beta: f64) -> Result<RhnParams> {
    if layer == 0 || layer > p.depth() {
        return Err(Error::contract(format!(
            "lesion layer {layer} outside 1..={}",
            p.depth()
        )));
    }
    let mut out = p.clone();
    out.layers[layer - 1].b_t.as_mut_slice().iter_mut().for_each(|b| *b = beta);
    Ok(out)
}
