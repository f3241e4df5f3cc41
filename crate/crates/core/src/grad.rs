//! Backpropagation through time, a finite-difference oracle and gradient
//! clipping.

use crate::cells::{ops, CellCache};
use crate::error::{Error, Result};
use crate::loss::{bernoulli_nll_grad, softmax_xent_grad};
use crate::model::{Batch, DropoutMasks, LossKind, Network, StepData};
use crate::numerics::Matrix;

/// Gradient of a scalar loss, shaped exactly like the network it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Network);

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients(net.zeros_like())
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.0.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.tensors_mut().into_iter().zip(other.0.tensors()) {
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x += y;
            }
        }
    }

    /// Largest absolute entry, with the tensor it came from.
    pub fn max_abs(&self) -> (f64, String) {
        let mut best = (0.0, String::new());
        for t in self.0.tensors() {
            for v in t.data {
                if v.abs() > best.0 {
                    best = (v.abs(), t.name.clone());
                }
            }
        }
        best
    }
}

/// Result of one forward/backward pass over a window.
#[derive(Clone, Debug)]
pub struct BpttOutput {
    /// Total loss over every valid (step, stream) pair, in nats.
    pub loss: f64,
    /// Number of valid (step, stream) pairs scored.
    pub count: usize,
    pub grads: Gradients,
    /// State after the last step, `B × n`, for carrying into the next window.
    pub final_state: Matrix,
    /// Gradient of the loss with respect to the initial state.
    pub d_state0: Matrix,
    /// Mean transform-gate activation per recurrence layer (RHN only).
    pub gate_means: Option<Vec<f64>>,
}

/// Forward-only scoring.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub loss: f64,
    pub count: usize,
    pub final_state: Matrix,
    pub gate_means: Option<Vec<f64>>,
    /// Mean transform-gate activation, `[t][layer]`, averaged over streams and units.
    pub gate_trace: Vec<Vec<f64>>,
}

fn check_loss_kind(batch: &Batch, kind: LossKind) -> Result<()> {
    for y in &batch.targets {
        match (y, kind) {
            (StepData::Symbols(_), LossKind::SoftmaxXent) | (StepData::Frames(_), LossKind::BernoulliNll) => {}
            _ => return Err(Error::contract("targets do not match the loss kind")),
        }
    }
    Ok(())
}

fn check_state(net: &Network, batch: &Batch, state0: &Matrix) -> Result<()> {
    batch.validate()?;
    if state0.cols() != net.hidden_dim() {
        return Err(Error::dims("initial state width", net.hidden_dim(), state0.cols()));
    }
    if !batch.is_empty() && state0.rows() != batch.batch_size() {
        return Err(Error::dims("initial state rows", batch.batch_size(), state0.rows()));
    }
    Ok(())
}

struct StepResult {
    y: Matrix,
    cache: CellCache,
    /// State after the output mask, as seen by the head.
    o: Matrix,
    dlogits: Matrix,
    loss: f64,
    count: usize,
}

fn step_forward(
    net: &Network,
    batch: &Batch,
    t: usize,
    state: &Matrix,
    kind: LossKind,
    masks: Option<&DropoutMasks>,
) -> Result<StepResult> {
    let x = net.embed(&batch.inputs[t], masks)?;
    let hidden: &[Matrix] = masks.map_or(&[], |m| m.hidden.as_slice());
    let (y, cache) = net.cell.forward_batch(&x, state, hidden)?;
    let o = match masks.and_then(|m| m.output.as_ref()) {
        Some(m) => y.hadamard(m),
        None => y.clone(),
    };
    let mut logits = ops::affine(&o, net.heads.output_weights());
    logits.add_row_broadcast(net.heads.bias.as_slice());
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    let (mut loss, mut count) = (0.0, 0);
    for b in 0..logits.rows() {
        if !batch.is_valid(t, b) {
            continue;
        }
        let z = logits.row(b);
        let l = match (&batch.targets[t], kind) {
            (StepData::Symbols(ids), LossKind::SoftmaxXent) => {
                let id = ids[b];
                if id >= z.len() {
                    return Err(Error::contract(format!("target {id} outside {} classes", z.len())));
                }
                softmax_xent_grad(z, id, dlogits.row_mut(b))
            }
            (StepData::Frames(f), LossKind::BernoulliNll) => {
                if f.cols() != z.len() {
                    return Err(Error::dims("frame target", z.len(), f.cols()));
                }
                bernoulli_nll_grad(z, f.row(b), dlogits.row_mut(b))
            }
            _ => return Err(Error::contract("targets do not match the loss kind")),
        };
        loss += l;
        count += 1;
    }
    if !loss.is_finite() {
        return Err(Error::NumericFault(format!("non-finite loss at step {t}")));
    }
    Ok(StepResult {
        y,
        cache,
        o,
        dlogits,
        loss,
        count,
    })
}

fn gate_accumulate(acc: &mut Option<Vec<f64>>, cache: &CellCache) -> Option<Vec<f64>> {
    let means = cache.transform_gate_means()?;
    match acc {
        Some(a) => a.iter_mut().zip(&means).for_each(|(x, m)| *x += m),
        None => *acc = Some(means.clone()),
    }
    Some(means)
}

/// Score a window without retaining caches.
pub fn forward_loss(
    net: &Network,
    batch: &Batch,
    kind: LossKind,
    state0: &Matrix,
    masks: Option<&DropoutMasks>,
) -> Result<ForwardOutput> {
    check_state(net, batch, state0)?;
    check_loss_kind(batch, kind)?;
    let mut state = state0.clone();
    let (mut loss, mut count) = (0.0, 0);
    let mut gates = None;
    let mut trace = Vec::new();
    for t in 0..batch.len() {
        let r = step_forward(net, batch, t, &state, kind, masks).map_err(|e| e.with_context(format!("time step {t}")))?;
        loss += r.loss;
        count += r.count;
        if let Some(m) = gate_accumulate(&mut gates, &r.cache) {
            trace.push(m);
        }
        state = r.y;
    }
    Ok(ForwardOutput {
        loss,
        count,
        final_state: state,
        gate_means: gates.map(|g| g.into_iter().map(|v| v / batch.len() as f64).collect()),
        gate_trace: trace,
    })
}

/// Exact gradient of the total window loss with respect to every parameter
/// (embedding, cell and head) and the initial state.
pub fn bptt(
    net: &Network,
    batch: &Batch,
    kind: LossKind,
    state0: &Matrix,
    masks: Option<&DropoutMasks>,
) -> Result<BpttOutput> {
    check_state(net, batch, state0)?;
    check_loss_kind(batch, kind)?;
    let mut grads = Gradients::zeros_like(net);
    let mut steps = Vec::with_capacity(batch.len());
    let mut state = state0.clone();
    let (mut loss, mut count) = (0.0, 0);
    let mut gates = None;
    for t in 0..batch.len() {
        let r = step_forward(net, batch, t, &state, kind, masks).map_err(|e| e.with_context(format!("time step {t}")))?;
        loss += r.loss;
        count += r.count;
        gate_accumulate(&mut gates, &r.cache);
        state = r.y.clone();
        steps.push(r);
    }

    let g = &mut grads.0;
    let out_w = net.heads.output_weights();
    let tied = net.heads.tied();
    let mut ds_next = Matrix::zeros(state0.rows(), net.hidden_dim());
    for t in (0..steps.len()).rev() {
        let r = &steps[t];
        {
            let gw = if tied {
                g.heads.embedding.as_mut()
            } else {
                g.heads.projection.as_mut()
            }
            .expect("output weights present");
            ops::add_weight_grad(gw, &r.dlogits, &r.o);
        }
        r.dlogits.add_column_sums_into(g.heads.bias.as_mut_slice());
        let mut dy = Matrix::zeros(r.o.rows(), r.o.cols());
        ops::add_input_grad(&mut dy, &r.dlogits, out_w);
        if let Some(m) = masks.and_then(|m| m.output.as_ref()) {
            ops::mul_assign(&mut dy, m);
        }
        dy.axpy(1.0, &ds_next);
        let (ds, mut dx) = net
            .cell
            .backward_batch(&r.cache, &dy, &mut g.cell)
            .map_err(|e| e.with_context(format!("time step {t}")))?;
        if let Some(m) = masks.and_then(|m| m.input.as_ref()) {
            ops::mul_assign(&mut dx, m);
        }
        if let (StepData::Symbols(ids), Some(ge)) = (&batch.inputs[t], g.heads.embedding.as_mut()) {
            let embed_mask = masks.and_then(|m| m.embed.as_ref());
            for (b, &id) in ids.iter().enumerate() {
                let scale = embed_mask.map_or(1.0, |m| m[(b, id)]);
                for (dst, src) in ge.row_mut(id).iter_mut().zip(dx.row(b)) {
                    *dst += scale * src;
                }
            }
        }
        ds_next = ds;
    }

    let n_steps = batch.len().max(1) as f64;
    Ok(BpttOutput {
        loss,
        count,
        grads,
        final_state: state,
        d_state0: ds_next,
        gate_means: gates.map(|g| g.into_iter().map(|v| v / n_steps).collect()),
    })
}

/// Finite-difference stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdScheme {
    /// `(L(θ+ε) − L(θ−ε)) / 2ε`.
    Central,
    /// Richardson extrapolation of two central differences at `ε` and `ε/2`,
    /// `(4·D(ε/2) − D(ε)) / 3`; truncation error is `O(ε⁴)`, so a larger `ε`
    /// can be used and the cancellation floor drops accordingly.
    Richardson,
}

/// Finite-difference settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdConfig {
    pub eps: f64,
    pub scheme: FdScheme,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            scheme: FdScheme::Central,
        }
    }
}

impl FdConfig {
    pub fn richardson(eps: f64) -> Self {
        Self {
            eps,
            scheme: FdScheme::Richardson,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1e-8..=1e-3).contains(&self.eps) {
            return Err(Error::contract(format!("finite-difference eps {} outside [1e-8, 1e-3]", self.eps)));
        }
        Ok(())
    }
}

/// Central-difference derivative of a scalar function.
pub fn fd_derivative(f: impl Fn(f64) -> f64, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

/// Central-difference gradient of an arbitrary loss over every parameter of `net`.
pub fn fd_gradient_with(net: &Network, cfg: FdConfig, loss: impl Fn(&Network) -> Result<f64>) -> Result<Gradients> {
    cfg.validate()?;
    let mut probe = net.clone();
    let mut grads = Gradients::zeros_like(net);
    let shapes: Vec<(String, usize)> = net.tensors().into_iter().map(|t| (t.name, t.data.len())).collect();
    for (k, (name, len)) in shapes.iter().enumerate() {
        for i in 0..*len {
            let orig = net.tensors()[k].data[i];
            let mut eval = |v: f64| -> Result<f64> {
                probe.tensors_mut()[k].data[i] = v;
                let l = loss(&probe)?;
                if !l.is_finite() {
                    return Err(Error::NumericFault(format!("non-finite loss probing {name}[{i}]")));
                }
                Ok(l)
            };
            let mut central = |h: f64| -> Result<f64> { Ok((eval(orig + h)? - eval(orig - h)?) / (2.0 * h)) };
            let d = match cfg.scheme {
                FdScheme::Central => central(cfg.eps)?,
                FdScheme::Richardson => {
                    let coarse = central(cfg.eps)?;
                    (4.0 * central(cfg.eps / 2.0)? - coarse) / 3.0
                }
            };
            probe.tensors_mut()[k].data[i] = orig;
            grads.0.tensors_mut()[k].data[i] = d;
        }
    }
    Ok(grads)
}

/// Central-difference gradient of the total window loss, dropout disabled.
pub fn fd_gradient(net: &Network, batch: &Batch, kind: LossKind, state0: &Matrix, cfg: FdConfig) -> Result<Gradients> {
    fd_gradient_with(net, cfg, |p| forward_loss(p, batch, kind, state0, None).map(|o| o.loss))
}

/// Largest per-entry relative error `|a-b| / (|a|+|b|+1e-12)` and where it occurred.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (ta, tb) in a.0.tensors().iter().zip(b.0.tensors()) {
        for (i, (x, y)) in ta.data.iter().zip(tb.data).enumerate() {
            let rel = (x - y).abs() / (x.abs() + y.abs() + 1e-12);
            if rel > worst.0 {
                worst = (rel, format!("{}[{i}] ({x:e} vs {y:e})", ta.name));
            }
        }
    }
    worst
}

/// Rescale `g` so its global L2 norm is at most `max_norm`; returns the
/// applied factor.
pub fn clip_global_norm(g: &mut Gradients, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::contract(format!("max_norm must be > 0, got {max_norm}")));
    }
    let norm = g.global_norm();
    if norm > max_norm {
        let s = max_norm / norm;
        g.scale(s);
        Ok(s)
    } else {
        Ok(1.0)
    }
}
