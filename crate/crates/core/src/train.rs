//! SGD with momentum, schedules, variational dropout and the epoch loop.

use crate::data::BatchStream;
use crate::error::{Error, Result};
use crate::grad::{bptt, clip_global_norm, forward_loss, Gradients};
use crate::loss::{metrics, Metrics};
use crate::model::{Batch, DropoutMasks, InputKind, Network};
use crate::numerics::{Matrix, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Divisor applied once per epoch from `decay_start_epoch` on.
    pub lr_decay: f64,
    pub decay_start_epoch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub max_epochs: usize,
    pub dropout_embed: f64,
    pub dropout_input: f64,
    pub dropout_hidden: f64,
    pub dropout_output: f64,
    /// Separate hidden-state masks per recurrence layer instead of one shared mask.
    pub per_layer_hidden_masks: bool,
    pub weight_tying: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.2,
            lr_decay: 1.02,
            decay_start_epoch: 20,
            momentum: 0.9,
            weight_decay: 1e-7,
            clip_norm: 10.0,
            batch_size: 20,
            seq_len: 35,
            max_epochs: 10,
            dropout_embed: 0.0,
            dropout_input: 0.0,
            dropout_hidden: 0.0,
            dropout_output: 0.0,
            per_layer_hidden_masks: false,
            weight_tying: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::contract(msg));
        // lr = 0 is allowed: a frozen run that still scores every batch.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if !(self.lr_decay >= 1.0) {
            return bad(format!("lr_decay must be >= 1, got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be > 0, got {}", self.clip_norm));
        }
        if self.batch_size == 0 || self.seq_len == 0 {
            return bad("batch_size and seq_len must be positive".into());
        }
        for (name, p) in [
            ("dropout_embed", self.dropout_embed),
            ("dropout_input", self.dropout_input),
            ("dropout_hidden", self.dropout_hidden),
            ("dropout_output", self.dropout_output),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        Ok(())
    }

    pub fn uses_dropout(&self) -> bool {
        [self.dropout_embed, self.dropout_input, self.dropout_hidden, self.dropout_output]
            .iter()
            .any(|&p| p > 0.0)
    }
}

/// `lr₀` before `decay_start_epoch`, then `lr₀ / decay^(epoch − start + 1)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch < cfg.decay_start_epoch {
        cfg.lr
    } else {
        cfg.lr / cfg.lr_decay.powi((epoch - cfg.decay_start_epoch + 1) as i32)
    }
}

/// Velocity per parameter tensor, stored as a network of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub velocity: Network,
    pub epoch: usize,
}

impl OptimState {
    pub fn new(net: &Network) -> Self {
        Self {
            velocity: net.zeros_like(),
            epoch: 0,
        }
    }
}

/// Heavy-ball update at the current epoch's learning rate:
/// `g′ = g + wd·θ`, `v ← μv − lr·g′`, `θ ← θ + v`.
pub fn sgd_momentum_step(net: &mut Network, g: &Gradients, st: &mut OptimState, cfg: &TrainConfig) -> Result<()> {
    let lr = lr_at_epoch(cfg, st.epoch);
    let (mu, wd) = (cfg.momentum, cfg.weight_decay);
    let gs = g.0.tensors();
    let vs = st.velocity.tensors_mut();
    let ps = net.tensors_mut();
    if gs.len() != ps.len() || vs.len() != ps.len() {
        return Err(Error::dims("sgd_momentum_step", ps.len(), format!("{} gradients / {} velocities", gs.len(), vs.len())));
    }
    for ((p, g), v) in ps.into_iter().zip(gs).zip(vs) {
        if p.dims != g.dims || p.dims != v.dims {
            return Err(Error::dims("sgd_momentum_step", format!("{} {:?}", p.name, p.dims), format!("{:?}", g.dims)));
        }
        for ((theta, &gi), vi) in p.data.iter_mut().zip(g.data).zip(v.data.iter_mut()) {
            let gp = gi + wd * *theta;
            *vi = mu * *vi - lr * gp;
            *theta += *vi;
        }
    }
    Ok(())
}

/// Activation shapes of every dropout site for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskShapes {
    pub batch: usize,
    /// Vocabulary size when inputs are symbols; no embedding site otherwise.
    pub vocab: Option<usize>,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
}

impl MaskShapes {
    pub fn for_network(net: &Network, batch: usize) -> Self {
        Self {
            batch,
            vocab: match net.input {
                InputKind::Symbols { vocab } => Some(vocab),
                InputKind::Frames { .. } => None,
            },
            input_dim: net.cell.input_dim(),
            hidden_dim: net.hidden_dim(),
            depth: net.cell.depth(),
        }
    }
}

fn bernoulli_mask(rows: usize, cols: usize, p: f64, rng: &mut RngStream) -> Matrix {
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let data = (0..rows * cols).map(|_| if rng.bernoulli(keep) { scale } else { 0.0 }).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Inverted-dropout masks for one sequence. A site with `p = 0` gets no mask,
/// which the forward pass treats as all ones. Sites are drawn in the order
/// embedding, input, hidden, output.
pub fn sample_variational_masks(cfg: &TrainConfig, shapes: MaskShapes, rng: &mut RngStream) -> Result<DropoutMasks> {
    for p in [cfg.dropout_embed, cfg.dropout_input, cfg.dropout_hidden, cfg.dropout_output] {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::contract(format!("dropout probability must be in [0, 1), got {p}")));
        }
    }
    let b = shapes.batch;
    let mut site = |cols: usize, p: f64| (p > 0.0).then(|| bernoulli_mask(b, cols, p, rng));
    let embed = shapes.vocab.and_then(|v| site(v, cfg.dropout_embed));
    let input = site(shapes.input_dim, cfg.dropout_input);
    let layers = if cfg.per_layer_hidden_masks { shapes.depth } else { 1 };
    let hidden = (0..layers).filter_map(|_| site(shapes.hidden_dim, cfg.dropout_hidden)).collect();
    let output = site(shapes.hidden_dim, cfg.dropout_output);
    Ok(DropoutMasks {
        embed,
        input,
        hidden,
        output,
    })
}

/// Training or scoring data. Stream windows carry the hidden state from one
/// window to the next; independent sequences each start from zero.
#[derive(Clone, Copy, Debug)]
pub enum TrainData<'a> {
    Stream(&'a BatchStream),
    Sequences(&'a [Batch]),
}

impl TrainData<'_> {
    pub fn num_batches(&self) -> usize {
        match self {
            TrainData::Stream(s) => s.num_windows(),
            TrainData::Sequences(b) => b.len(),
        }
    }

    fn batch(&self, k: usize) -> Batch {
        match self {
            TrainData::Stream(s) => s.window(k).expect("window index in range"),
            TrainData::Sequences(b) => b[k].clone(),
        }
    }

    fn carries_state(&self) -> bool {
        matches!(self, TrainData::Stream(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss per scored prediction, in nats.
    pub train_nll: f64,
    pub grad_norm_mean: f64,
    pub grad_norm_max: f64,
    /// Mean transform-gate activation per recurrence layer (RHN only).
    pub gate_means: Option<Vec<f64>>,
    pub batches: usize,
}

fn fault(epoch: usize, k: usize, msg: &str) -> Error {
    Error::NumericFault(format!("epoch {epoch}, batch {k}: {msg}"))
}

/// One pass over `data`. Each batch minimises its total loss divided by the
/// batch size; gradients are clipped to `clip_norm` before the update.
pub fn train_epoch(
    net: &mut Network,
    data: TrainData,
    cfg: &TrainConfig,
    st: &mut OptimState,
    rng: &mut RngStream,
) -> Result<EpochStats> {
    cfg.validate()?;
    let epoch = st.epoch;
    let lr = lr_at_epoch(cfg, epoch);
    let (mut loss, mut count) = (0.0, 0usize);
    let (mut norm_sum, mut norm_max) = (0.0, 0.0f64);
    let mut gates: Option<Vec<f64>> = None;
    let mut state: Option<Matrix> = None;
    let n = data.num_batches();
    for k in 0..n {
        let batch = data.batch(k);
        let b = batch.batch_size();
        let s0 = match state.take() {
            Some(s) if data.carries_state() && s.rows() == b => s,
            _ => Matrix::zeros(b, net.hidden_dim()),
        };
        let masks = if cfg.uses_dropout() {
            Some(sample_variational_masks(cfg, MaskShapes::for_network(net, b), rng)?)
        } else {
            None
        };
        let out = bptt(net, &batch, net.input.loss_kind(), &s0, masks.as_ref())
            .map_err(|e| e.with_context(format!("epoch {epoch}, batch {k}")))?;
        if !out.loss.is_finite() {
            return Err(fault(epoch, k, "non-finite loss"));
        }
        let mut g = out.grads;
        g.scale(1.0 / b as f64);
        let norm = g.global_norm();
        if !norm.is_finite() {
            return Err(fault(epoch, k, "non-finite gradient"));
        }
        clip_global_norm(&mut g, cfg.clip_norm)?;
        sgd_momentum_step(net, &g, st, cfg)?;
        if !net.is_finite() {
            return Err(fault(epoch, k, "non-finite parameters after update"));
        }
        loss += out.loss;
        count += out.count;
        norm_sum += norm;
        norm_max = norm_max.max(norm);
        if let Some(m) = out.gate_means {
            match &mut gates {
                Some(acc) => acc.iter_mut().zip(&m).for_each(|(a, v)| *a += v),
                None => gates = Some(m),
            }
        }
        state = Some(out.final_state);
    }
    st.epoch += 1;
    let nb = n.max(1) as f64;
    Ok(EpochStats {
        epoch,
        lr,
        train_nll: if count > 0 { loss / count as f64 } else { f64::NAN },
        grad_norm_mean: norm_sum / nb,
        grad_norm_max: norm_max,
        gate_means: gates.map(|g| g.into_iter().map(|v| v / nb).collect()),
        batches: n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub nll: f64,
    pub count: usize,
    pub metrics: Metrics,
    pub gate_means: Option<Vec<f64>>,
}

/// Mask-free scoring of every batch; stream state carries across windows.
pub fn evaluate(net: &Network, data: TrainData) -> Result<Evaluation> {
    let (mut loss, mut count) = (0.0, 0usize);
    let mut gates: Option<Vec<f64>> = None;
    let mut state: Option<Matrix> = None;
    let n = data.num_batches();
    for k in 0..n {
        let batch = data.batch(k);
        let b = batch.batch_size();
        let s0 = match state.take() {
            Some(s) if data.carries_state() && s.rows() == b => s,
            _ => Matrix::zeros(b, net.hidden_dim()),
        };
        let out = forward_loss(net, &batch, net.input.loss_kind(), &s0, None)
            .map_err(|e| e.with_context(format!("batch {k}")))?;
        loss += out.loss;
        count += out.count;
        if let Some(m) = out.gate_means {
            match &mut gates {
                Some(acc) => acc.iter_mut().zip(&m).for_each(|(a, v)| *a += v),
                None => gates = Some(m),
            }
        }
        state = Some(out.final_state);
    }
    let nll = if count > 0 { loss / count as f64 } else { f64::NAN };
    Ok(Evaluation {
        nll,
        count,
        metrics: metrics(nll),
        gate_means: gates.map(|g| g.into_iter().map(|v| v / n.max(1) as f64).collect()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub stats: EpochStats,
    pub val: Option<Evaluation>,
}

impl EpochRecord {
    /// Validation loss if scored, else the epoch's training loss.
    pub fn selection_loss(&self) -> f64 {
        self.val.as_ref().map_or(self.stats.train_nll, |v| v.nll)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_loss: f64,
    /// Parameters after the best epoch.
    pub best: Option<Network>,
    /// Set when a numeric fault ended training early.
    pub diverged: Option<String>,
}

impl FitReport {
    pub fn epochs_run(&self) -> usize {
        self.records.len()
    }
}

/// Up to `cfg.max_epochs` epochs, tracking the best selection loss and
/// stopping after `patience` epochs without improvement. A numeric fault
/// stops training and is reported in `diverged` rather than as an error.
pub fn fit(
    net: &mut Network,
    train: TrainData,
    val: Option<TrainData>,
    cfg: &TrainConfig,
    rng: &mut RngStream,
    patience: Option<usize>,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<FitReport> {
    cfg.validate()?;
    let mut st = OptimState::new(net);
    let mut report = FitReport {
        records: Vec::new(),
        best_epoch: None,
        best_loss: f64::INFINITY,
        best: None,
        diverged: None,
    };
    let mut stale = 0;
    for _ in 0..cfg.max_epochs {
        let stats = match train_epoch(net, train, cfg, &mut st, rng) {
            Ok(s) => s,
            Err(e @ Error::NumericFault(_)) => {
                report.diverged = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let val = match val.map(|v| evaluate(net, v)).transpose() {
            Ok(v) => v,
            Err(e @ Error::NumericFault(_)) => {
                report.diverged = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let rec = EpochRecord { stats, val };
        on_epoch(&rec)?;
        let l = rec.selection_loss();
        if l < report.best_loss {
            report.best_loss = l;
            report.best_epoch = Some(rec.stats.epoch);
            report.best = Some(net.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        report.records.push(rec);
        if patience.is_some_and(|p| stale >= p) {
            break;
        }
    }
    Ok(report)
}
