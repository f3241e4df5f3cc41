//! Per-step losses and evaluation metrics.

use crate::error::{Error, Result};
use crate::numerics::sigmoid;

/// `-log softmax(logits)[target]` in nats.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::contract(format!("target {target} outside {} classes", logits.len())));
    }
    Ok(log_sum_exp(logits) - logits[target])
}

/// Softmax cross-entropy and its gradient `softmax(z) - onehot(target)`,
/// written into `grad`.
pub(crate) fn softmax_xent_grad(logits: &[f64], target: usize, grad: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (g, &z) in grad.iter_mut().zip(logits) {
        *g = (z - max).exp();
        sum += *g;
    }
    for g in grad.iter_mut() {
        *g /= sum;
    }
    grad[target] -= 1.0;
    max + sum.ln() - logits[target]
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Summed Bernoulli negative log-likelihood of binary `targets` under
/// independent logistic outputs.
pub fn bernoulli_nll(logits: &[f64], targets: &[f64]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::dims("bernoulli_nll", logits.len(), targets.len()));
    }
    let mut total = 0.0;
    for (&z, &y) in logits.iter().zip(targets) {
        if y != 0.0 && y != 1.0 {
            return Err(Error::contract(format!("non-binary target {y}")));
        }
        total += bernoulli_term(z, y);
    }
    Ok(total)
}

#[inline]
fn bernoulli_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Bernoulli NLL and its gradient `σ(z) - y`.
pub(crate) fn bernoulli_nll_grad(logits: &[f64], targets: &[f64], grad: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for ((g, &z), &y) in grad.iter_mut().zip(logits).zip(targets) {
        total += bernoulli_term(z, y);
        *g = sigmoid(z) - y;
    }
    total
}

/// Perplexity and bits per symbol for a mean NLL in nats.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub nll: f64,
    pub perplexity: f64,
    pub bpc: f64,
}

pub fn metrics(mean_nll: f64) -> Metrics {
    Metrics {
        nll: mean_nll,
        perplexity: mean_nll.exp(),
        bpc: mean_nll / std::f64::consts::LN_2,
    }
}
