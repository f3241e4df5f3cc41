//! Independent finite-difference oracle evaluated in double-double arithmetic.
//!
//! The forward pass below is written from the cell equations, not from the
//! library's kernels, and runs in ~106-bit arithmetic. A central difference
//! with eps = 1e-8 then has truncation error near 1e-17 and cancellation
//! error near 1e-23, so even gradient entries of order 1e-9 are resolved to
//! well under 1e-6 relative.

#![allow(dead_code)]

use rhn_core::cells::{Activation, Cell};
use rhn_core::grad::Gradients;
use rhn_core::numerics::Matrix;
use rhn_core::{Batch, DropoutMasks, Network, StepData};
use twofloat::TwoFloat as D;

pub const EXT_EPS: f64 = 1e-8;

fn d(x: f64) -> D {
    D::from(x)
}

/// `a / b` to full double-double accuracy. The crate's own division is
/// only f64-accurate, so refine its quotient with two correction steps that
/// use the exact product and sum.
fn div(a: D, b: D) -> D {
    let mut q = d(a.hi() / b.hi());
    for _ in 0..2 {
        let r = a - b * q;
        q += d(r.hi() / b.hi());
    }
    q
}

/// `e^x`: reduce by multiples of ln 2, scale down by 2⁻¹⁰, Taylor series,
/// then square back up.
fn exp(x: D) -> D {
    let k = (x.hi() / std::f64::consts::LN_2).round();
    let r = (x - twofloat::consts::LN_2 * d(k)) * d(1.0 / 1024.0);
    let mut term = d(1.0);
    let mut sum = d(1.0);
    for i in 1..=16 {
        term = div(term * r, d(i as f64));
        sum += term;
    }
    for _ in 0..10 {
        sum = sum * sum;
    }
    sum * d(2f64.powi(k as i32))
}

/// Natural log via Newton's method on `exp`.
fn ln(x: D) -> D {
    let mut y = d(x.hi().ln());
    for _ in 0..3 {
        y = y + x * exp(-y) - d(1.0);
    }
    y
}

fn tanh(x: D) -> D {
    d(1.0) - div(d(2.0), exp(d(2.0) * x) + d(1.0))
}

fn sigmoid(x: D) -> D {
    div(d(1.0), d(1.0) + exp(-x))
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: D) -> D {
    if z.hi() > 0.0 {
        z + ln(d(1.0) + exp(-z))
    } else {
        ln(d(1.0) + exp(z))
    }
}

/// All parameter tensors of a network, in `Network::tensors` order.
#[derive(Clone)]
pub struct ExtParams {
    names: Vec<String>,
    dims: Vec<Vec<usize>>,
    data: Vec<Vec<D>>,
}

impl ExtParams {
    pub fn from_network(net: &Network) -> Self {
        let ts = net.tensors();
        Self {
            names: ts.iter().map(|t| t.name.clone()).collect(),
            dims: ts.iter().map(|t| t.dims.clone()).collect(),
            data: ts.iter().map(|t| t.data.iter().map(|&v| d(v)).collect()).collect(),
        }
    }

    fn get(&self, name: &str) -> Option<(&[D], usize)> {
        let k = self.names.iter().position(|n| n == name)?;
        Some((&self.data[k], *self.dims[k].last().unwrap()))
    }

    fn t(&self, name: &str) -> (&[D], usize) {
        self.get(name).unwrap_or_else(|| panic!("missing tensor {name}"))
    }
}

/// `M v` for a row-major matrix with `cols` columns.
fn mv(m: (&[D], usize), v: &[D]) -> Vec<D> {
    let (data, cols) = m;
    data.chunks(cols)
        .map(|row| row.iter().zip(v).fold(d(0.0), |acc, (a, b)| acc + *a * *b))
        .collect()
}

fn add(a: &[D], b: &[D]) -> Vec<D> {
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

fn scale_by(v: &[D], mask: Option<&[f64]>) -> Vec<D> {
    match mask {
        Some(m) => v.iter().zip(m).map(|(x, s)| *x * d(*s)).collect(),
        None => v.to_vec(),
    }
}

fn hidden_mask<'a>(masks: Option<&'a DropoutMasks>, layer: usize, b: usize) -> Option<&'a [f64]> {
    let h = &masks?.hidden;
    let m = match h.len() {
        0 => return None,
        1 => &h[0],
        _ => &h[layer],
    };
    Some(m.row(b))
}

/// One recurrent step for stream `b`.
fn cell_step(net: &Network, p: &ExtParams, x: &[D], s0: &[D], masks: Option<&DropoutMasks>, b: usize) -> Vec<D> {
    match &net.cell {
        Cell::Rnn(r) => {
            let sm = scale_by(s0, hidden_mask(masks, 0, b));
            let pre = add(&add(&mv(p.t("cell.w"), x), &mv(p.t("cell.r"), &sm)), p.t("cell.b").0);
            pre.into_iter()
                .map(|z| match r.activation {
                    Activation::Tanh => tanh(z),
                    Activation::Logistic => sigmoid(z),
                })
                .collect()
        }
        Cell::Rhn(r) => {
            let cfg = &r.config;
            let mut s = s0.to_vec();
            for l in 0..cfg.depth {
                let sm = scale_by(&s, hidden_mask(masks, l, b));
                let feeds = l == 0 || !cfg.input_first_layer_only;
                let gate = |w: &str, rn: &str, bn: &str| -> Vec<D> {
                    let mut pre = add(&mv(p.t(&format!("cell.l{l}.{rn}")), &sm), p.t(&format!("cell.l{l}.{bn}")).0);
                    if feeds {
                        pre = add(&pre, &mv(p.t(w), x));
                    }
                    pre
                };
                let h: Vec<D> = gate("cell.w_h", "r_h", "b_h").into_iter().map(tanh).collect();
                let t: Vec<D> = gate("cell.w_t", "r_t", "b_t").into_iter().map(sigmoid).collect();
                let c: Vec<D> = if cfg.coupled_gates {
                    t.iter().map(|v| d(1.0) - *v).collect()
                } else {
                    gate("cell.w_c", "r_c", "b_c").into_iter().map(sigmoid).collect()
                };
                s = (0..s.len()).map(|i| h[i] * t[i] + s[i] * c[i]).collect();
            }
            s
        }
        Cell::Dt(q) => {
            let mut s = s0.to_vec();
            for k in 0..q.layers.len() {
                let sm = scale_by(&s, hidden_mask(masks, k, b));
                let mut pre = add(&mv(p.t(&format!("cell.l{k}.r")), &sm), p.t(&format!("cell.l{k}.b")).0);
                if k == 0 {
                    pre = add(&pre, &mv(p.t("cell.w"), x));
                }
                if q.skip {
                    pre = add(&pre, s0);
                }
                s = pre.into_iter().map(tanh).collect();
            }
            s
        }
    }
}

/// Total window loss in double-double precision.
pub fn ext_loss(net: &Network, p: &ExtParams, batch: &Batch, state0: &Matrix, masks: Option<&DropoutMasks>) -> D {
    let mut total = d(0.0);
    let proj_name = if p.get("head.projection").is_some() {
        "head.projection"
    } else {
        "head.embedding"
    };
    for b in 0..state0.rows() {
        let mut s: Vec<D> = state0.row(b).iter().map(|&v| d(v)).collect();
        for t in 0..batch.len() {
            let x: Vec<D> = match &batch.inputs[t] {
                StepData::Symbols(ids) => {
                    let (e, m) = p.t("head.embedding");
                    let id = ids[b];
                    let keep = masks.and_then(|mk| mk.embed.as_ref()).map_or(1.0, |mk| mk[(b, id)]);
                    e[id * m..(id + 1) * m].iter().map(|v| *v * d(keep)).collect()
                }
                StepData::Frames(f) => f.row(b).iter().map(|&v| d(v)).collect(),
            };
            let x = scale_by(&x, masks.and_then(|mk| mk.input.as_ref()).map(|mk| mk.row(b)));
            s = cell_step(net, p, &x, &s, masks, b);
            if !batch.valid.as_ref().is_none_or(|v| v[t][b]) {
                continue;
            }
            let o = scale_by(&s, masks.and_then(|mk| mk.output.as_ref()).map(|mk| mk.row(b)));
            let z = add(&mv(p.t(proj_name), &o), p.t("head.bias").0);
            total += match &batch.targets[t] {
                StepData::Symbols(ids) => {
                    let max = z.iter().map(|v| v.hi()).fold(f64::NEG_INFINITY, f64::max);
                    let sum = z.iter().fold(d(0.0), |acc, v| acc + exp(*v - d(max)));
                    d(max) + ln(sum) - z[ids[b]]
                }
                StepData::Frames(f) => z
                    .iter()
                    .zip(f.row(b))
                    .fold(d(0.0), |acc, (zi, &y)| acc + softplus(*zi) - *zi * d(y)),
            };
        }
    }
    total
}

/// Central-difference gradient of the total window loss, in double-double.
pub fn ext_fd_gradient(net: &Network, batch: &Batch, state0: &Matrix, masks: Option<&DropoutMasks>) -> Gradients {
    let base = ExtParams::from_network(net);
    let mut probe = base.clone();
    let mut out = Gradients::zeros_like(net);
    let h = d(EXT_EPS);
    for (k, t) in out.0.tensors_mut().into_iter().enumerate() {
        for i in 0..t.data.len() {
            let orig = base.data[k][i];
            probe.data[k][i] = orig + h;
            let plus = ext_loss(net, &probe, batch, state0, masks);
            probe.data[k][i] = orig - h;
            let minus = ext_loss(net, &probe, batch, state0, masks);
            probe.data[k][i] = orig;
            let g = div(plus - minus, d(2.0) * h);
            t.data[i] = g.hi() + g.lo();
        }
    }
    out
}

/// Spot checks of the transcendental kernels against reference values.
pub fn self_check() {
    let e1 = exp(d(1.0));
    let err = (e1 - twofloat::consts::E).hi().abs();
    assert!(err < 1e-28, "exp(1) error {err:e}");
    let l = ln(d(10.0));
    assert!((l - twofloat::consts::LN_10).hi().abs() < 1e-28);
    assert!((exp(ln(d(0.37))) - d(0.37)).hi().abs() < 1e-28);
    let third = div(d(1.0), d(3.0));
    assert!((third * d(3.0) - d(1.0)).hi().abs() < 1e-31);
}
