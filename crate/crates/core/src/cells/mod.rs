//! Recurrent cells: standard RNN, Recurrent Highway Network and the
//! deep-transition baselines.
//!
//! Every cell works on batches: inputs are `B × m` and states `B × n`, one
//! stream per row. The single-example functions (`rnn_step`, `rhn_step`,
//! `dt_step`) are thin wrappers over a batch of one.

mod dt;
mod rhn;
mod rnn;

pub use dt::{dt_step, DtCache, DtLayer, DtRnnParams};
pub use rhn::{rhn_step, set_lesion_bias, RhnConfig, RhnLayer, RhnLayerCache, RhnParams, StepCache};
pub use rnn::{rnn_step, RnnCache, RnnParams};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{gaussian_matrix, sigmoid, uniform_matrix, Matrix, RngStream, Vector};

/// Pointwise nonlinearity of a standard RNN.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Logistic,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Logistic => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation output `y = f(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Logistic => y * (1.0 - y),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        self.derivative_from_output(self.apply(x))
    }

    /// Supremum of `|f'|` over the reals.
    pub fn derivative_bound(self) -> f64 {
        match self {
            Activation::Tanh => 1.0,
            Activation::Logistic => 0.25,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "logistic" | "sigmoid" => Ok(Activation::Logistic),
            other => Err(Error::contract(format!("unknown activation '{other}'"))),
        }
    }
}

/// Cell family, as named in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Rnn,
    Rhn,
    /// Deep-transition RNN.
    Dt,
    /// Deep-transition RNN with skip connections.
    Dts,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Rnn => "rnn",
            Family::Rhn => "rhn",
            Family::Dt => "dt",
            Family::Dts => "dts",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(Family::Rnn),
            "rhn" => Ok(Family::Rhn),
            "dt" => Ok(Family::Dt),
            "dts" => Ok(Family::Dts),
            other => Err(Error::contract(format!("unknown model family '{other}'"))),
        }
    }
}

/// Weight initialisation scheme.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// `N(0, std²)` for every weight matrix.
    Gaussian { std: f64 },
    /// `U[-scale, scale]` for every weight matrix.
    Uniform { scale: f64 },
    /// Square recurrent matrices are `I` plus `N(0, std²)` off the diagonal;
    /// input matrices are `N(0, std²)`.
    IdentityRecurrent { std: f64 },
}

impl InitScheme {
    fn validate(&self) -> Result<()> {
        let v = match *self {
            InitScheme::Gaussian { std } => std,
            InitScheme::Uniform { scale } => scale,
            InitScheme::IdentityRecurrent { std } => std,
        };
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::contract(format!("init scheme parameter must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    pub(crate) fn input_matrix(&self, rng: &mut RngStream, rows: usize, cols: usize) -> Result<Matrix> {
        match *self {
            InitScheme::Gaussian { std } | InitScheme::IdentityRecurrent { std } => {
                gaussian_matrix(rng, rows, cols, std)
            }
            InitScheme::Uniform { scale } => uniform_matrix(rng, rows, cols, -scale, scale),
        }
    }

    pub(crate) fn recurrent_matrix(&self, rng: &mut RngStream, n: usize) -> Result<Matrix> {
        match *self {
            InitScheme::IdentityRecurrent { std } => {
                let mut m = gaussian_matrix(rng, n, n, std)?;
                for i in 0..n {
                    m[(i, i)] = 1.0;
                }
                Ok(m)
            }
            _ => self.input_matrix(rng, n, n),
        }
    }
}

/// Everything needed to build a cell of any family.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSpec {
    pub family: Family,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Recurrence depth; must be 1 for [`Family::Rnn`].
    pub depth: usize,
    pub coupled_gates: bool,
    pub input_first_layer_only: bool,
    pub transform_bias_init: f64,
}

impl CellSpec {
    pub fn rhn(input_dim: usize, hidden_dim: usize, depth: usize) -> Self {
        Self {
            family: Family::Rhn,
            input_dim,
            hidden_dim,
            depth,
            coupled_gates: true,
            input_first_layer_only: true,
            transform_bias_init: 0.0,
        }
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        if family == Family::Rnn {
            self.depth = 1;
        }
        self
    }

    pub fn rhn_config(&self) -> RhnConfig {
        RhnConfig {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            depth: self.depth,
            coupled_gates: self.coupled_gates,
            input_first_layer_only: self.input_first_layer_only,
            transform_bias_init: self.transform_bias_init,
        }
    }

    /// Number of trainable cell parameters.
    pub fn param_count(&self) -> usize {
        let (m, n, l) = (self.input_dim, self.hidden_dim, self.depth);
        match self.family {
            Family::Rnn => n * m + n * n + n,
            Family::Dt | Family::Dts => n * m + l * (n * n + n),
            Family::Rhn => {
                let gates = if self.coupled_gates { 2 } else { 3 };
                gates * n * m + l * gates * (n * n + n)
            }
        }
    }

    pub fn init(&self, scheme: InitScheme, rng: &mut RngStream) -> Result<Cell> {
        scheme.validate()?;
        if self.input_dim == 0 || self.hidden_dim == 0 || self.depth == 0 {
            return Err(Error::contract(format!("cell dimensions must be >= 1: {self:?}")));
        }
        Ok(match self.family {
            Family::Rnn => Cell::Rnn(RnnParams::init(self.input_dim, self.hidden_dim, scheme, rng)?),
            Family::Rhn => Cell::Rhn(RhnParams::init(self.rhn_config(), scheme, rng)?),
            Family::Dt | Family::Dts => Cell::Dt(DtRnnParams::init(
                self.input_dim,
                self.hidden_dim,
                self.depth,
                self.family == Family::Dts,
                scheme,
                rng,
            )?),
        })
    }
}

/// A recurrent cell of any supported family.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Rnn(RnnParams),
    Rhn(RhnParams),
    Dt(DtRnnParams),
}

/// Per-step activations retained for backpropagation.
#[derive(Clone, Debug)]
pub enum CellCache {
    Rnn(RnnCache),
    Rhn(StepCache),
    Dt(DtCache),
}

impl CellCache {
    /// Mean transform-gate activation per recurrence layer (RHN only).
    pub fn transform_gate_means(&self) -> Option<Vec<f64>> {
        match self {
            CellCache::Rhn(c) => Some(c.layers.iter().map(|l| mean(l.t.as_slice())).collect()),
            _ => None,
        }
    }
}

impl Cell {
    pub fn family(&self) -> Family {
        match self {
            Cell::Rnn(_) => Family::Rnn,
            Cell::Rhn(_) => Family::Rhn,
            Cell::Dt(p) if p.skip => Family::Dts,
            Cell::Dt(_) => Family::Dt,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Cell::Rnn(p) => p.w.cols(),
            Cell::Rhn(p) => p.config.input_dim,
            Cell::Dt(p) => p.w.cols(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Cell::Rnn(p) => p.w.rows(),
            Cell::Rhn(p) => p.config.hidden_dim,
            Cell::Dt(p) => p.w.rows(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Cell::Rnn(_) => 1,
            Cell::Rhn(p) => p.layers.len(),
            Cell::Dt(p) => p.layers.len(),
        }
    }

    /// Batched step. `hidden_masks` is empty (no dropout), one mask shared by
    /// all recurrence layers, or one mask per layer.
    pub fn forward_batch(&self, x: &Matrix, s0: &Matrix, hidden_masks: &[Matrix]) -> Result<(Matrix, CellCache)> {
        check_batch_dims("cell forward", x, s0, self.input_dim(), self.hidden_dim())?;
        match self {
            Cell::Rnn(p) => p.forward_batch(x, s0, hidden_masks.first()).map(|(y, c)| (y, CellCache::Rnn(c))),
            Cell::Rhn(p) => p.forward_batch(x, s0, hidden_masks).map(|(y, c)| (y, CellCache::Rhn(c))),
            Cell::Dt(p) => p.forward_batch(x, s0, hidden_masks).map(|(y, c)| (y, CellCache::Dt(c))),
        }
    }

    /// Backward through one batched step: accumulates parameter gradients
    /// into `grads` and returns `(∂L/∂s₀, ∂L/∂x)`.
    pub fn backward_batch(&self, cache: &CellCache, dy: &Matrix, grads: &mut Cell) -> Result<(Matrix, Matrix)> {
        match (self, cache, grads) {
            (Cell::Rnn(p), CellCache::Rnn(c), Cell::Rnn(g)) => Ok(p.backward_batch(c, dy, g)),
            (Cell::Rhn(p), CellCache::Rhn(c), Cell::Rhn(g)) => Ok(p.backward_batch(c, dy, g)),
            (Cell::Dt(p), CellCache::Dt(c), Cell::Dt(g)) => Ok(p.backward_batch(c, dy, g)),
            _ => Err(Error::contract("cell, cache and gradient families differ")),
        }
    }

    /// Single-example step.
    pub fn step(&self, x: &Vector, y_prev: &Vector) -> Result<(Vector, CellCache)> {
        let (y, cache) = self.forward_batch(&x.to_row(), &y_prev.to_row(), &[])?;
        Ok((y.row_vector(0), cache))
    }
}

/// Run a cell over `inputs`, threading the state from `y0`.
pub fn forward_sequence(cell: &Cell, inputs: &[Vector], y0: &Vector) -> Result<(Vec<Vector>, Vec<CellCache>)> {
    if y0.len() != cell.hidden_dim() {
        return Err(Error::dims("forward_sequence", cell.hidden_dim(), y0.len()));
    }
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut caches = Vec::with_capacity(inputs.len());
    let mut y = y0.clone();
    for (t, x) in inputs.iter().enumerate() {
        let (next, cache) = cell.step(x, &y).map_err(|e| e.with_context(format!("time step {t}")))?;
        outputs.push(next.clone());
        caches.push(cache);
        y = next;
    }
    Ok((outputs, caches))
}

fn check_batch_dims(op: &'static str, x: &Matrix, s0: &Matrix, m: usize, n: usize) -> Result<()> {
    if x.cols() != m {
        return Err(Error::dims(op, format!("input width {m}"), x.cols()));
    }
    if s0.cols() != n {
        return Err(Error::dims(op, format!("state width {n}"), s0.cols()));
    }
    if x.rows() != s0.rows() {
        return Err(Error::dims(op, format!("{} batch rows", s0.rows()), x.rows()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Elementwise kernels shared by the cells.
pub(crate) mod ops {
    use crate::numerics::{gemm, Matrix, Trans};

    /// `x Wᵀ` for a batch `x` (B × m) and weights `W` (n × m).
    pub fn affine(x: &Matrix, w: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), w.rows());
        gemm(1.0, x, Trans::No, w, Trans::Yes, 0.0, &mut out);
        out
    }

    /// `acc += x Wᵀ`.
    pub fn add_affine(acc: &mut Matrix, x: &Matrix, w: &Matrix) {
        gemm(1.0, x, Trans::No, w, Trans::Yes, 1.0, acc);
    }

    /// `grad_w += dpreᵀ x`.
    pub fn add_weight_grad(grad_w: &mut Matrix, dpre: &Matrix, x: &Matrix) {
        gemm(1.0, dpre, Trans::Yes, x, Trans::No, 1.0, grad_w);
    }

    /// `acc += dpre W`.
    pub fn add_input_grad(acc: &mut Matrix, dpre: &Matrix, w: &Matrix) {
        gemm(1.0, dpre, Trans::No, w, Trans::No, 1.0, acc);
    }

    pub fn mul_assign(a: &mut Matrix, b: &Matrix) {
        for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
            *x *= y;
        }
    }

    pub fn masked(s: &Matrix, mask: Option<&Matrix>) -> Option<Matrix> {
        mask.map(|m| s.hadamard(m))
    }
}
