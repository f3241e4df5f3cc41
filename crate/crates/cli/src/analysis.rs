//! Post-hoc analyses of a trained or freshly initialised network: transform
//! gate activity, layer lesioning, Jacobian spectra and checkpoint summaries.

use std::fmt::Write as _;

use anyhow::{anyhow, bail, Result};
use rhn_core::cells::set_lesion_bias;
use rhn_core::data::{BatchStream, PianoRollSet};
use rhn_core::grad::forward_loss;
use rhn_core::numerics::{spectral_norm_default, uniform_vector, Matrix, RngStream, Vector};
use rhn_core::spectral::{cell_jacobian, gersgorin_discs, rhn_jacobian, rnn_jacobian, JacobianForm, SpectrumReport};
use rhn_core::train::{evaluate, TrainData};
use rhn_core::{Batch, Cell, Network};

use crate::checkpoint::{Checkpoint, VERSION};
use crate::experiment::{Dataset, Split};
use crate::tables::{real, write_table, DISCS_HEADER, EIGEN_HEADER, GATES_HEADER, LESION_HEADER, SPECTRA_SUMMARY_HEADER};

/// Transform-gate bias that turns a layer into a pure carry.
pub const LESION_BIAS: f64 = -20.0;

/// Single-stream sequences for gate dumps: consecutive `seq_len` windows of a
/// symbol split, or whole piano-roll sequences, at most `count` of them.
pub fn gate_sequences(data: &Dataset, split: Split, seq_len: usize, count: usize) -> Result<Vec<Batch>> {
    match data {
        Dataset::Symbols(s) => {
            let part = match split {
                Split::Train => &s.train,
                Split::Val => &s.val,
                Split::Test => &s.test,
            };
            if part.len() < seq_len + 1 {
                bail!("{} split has fewer than {} symbols", split.as_str(), seq_len + 1);
            }
            let stream = BatchStream::new(&part.symbols, 1, seq_len)?;
            Ok((0..stream.num_windows().min(count)).filter_map(|k| stream.window(k)).collect())
        }
        Dataset::Rolls { train, val, test } => {
            let part = match split {
                Split::Train => train,
                Split::Val => val,
                Split::Test => test,
            };
            let mut out = Vec::new();
            for seq in part.sequences.iter().filter(|s| s.len() >= 2).take(count) {
                let one = PianoRollSet {
                    dim: part.dim,
                    sequences: vec![seq.clone()],
                };
                out.extend(one.batches(1)?);
            }
            Ok(out)
        }
    }
}

/// Mean transform-gate activation, indexed `[sequence][step][layer]`. Each
/// sequence starts from the zero state.
pub fn gate_activity(net: &Network, sequences: &[Batch]) -> Result<Vec<Vec<Vec<f64>>>> {
    if !matches!(net.cell, Cell::Rhn(_)) {
        bail!("gate activity needs an RHN checkpoint, got {}", net.cell.family());
    }
    sequences
        .iter()
        .map(|b| {
            let s0 = Matrix::zeros(b.batch_size(), net.hidden_dim());
            Ok(forward_loss(net, b, net.input.loss_kind(), &s0, None)?.gate_trace)
        })
        .collect()
}

pub fn gate_rows(activity: &[Vec<Vec<f64>>]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (s, seq) in activity.iter().enumerate() {
        let depth = seq.first().map_or(0, Vec::len);
        for layer in 0..depth {
            for (t, step) in seq.iter().enumerate() {
                rows.push(vec![s.to_string(), (layer + 1).to_string(), t.to_string(), real(step[layer])]);
            }
        }
    }
    rows
}

pub fn cmd_gates(net: &Network, sequences: &[Batch], dir: &std::path::Path) -> Result<Vec<Vec<Vec<f64>>>> {
    let act = gate_activity(net, sequences)?;
    write_table(&dir.join("gates.csv"), GATES_HEADER, &gate_rows(&act))?;
    Ok(act)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LesionRow {
    /// 0 is the unlesioned baseline; recurrence layers count from 1.
    pub layer: usize,
    pub train_nll: f64,
    /// `train_nll` minus the baseline's.
    pub delta: f64,
}

/// Copy of `net` with layer `layer` (1-based) of its RHN pushed to carry.
pub fn lesioned(net: &Network, layer: usize) -> Result<Network> {
    let Cell::Rhn(p) = &net.cell else {
        bail!("lesioning needs an RHN checkpoint, got {}", net.cell.family());
    };
    let mut out = net.clone();
    out.cell = Cell::Rhn(set_lesion_bias(p, layer, LESION_BIAS)?);
    Ok(out)
}

/// Baseline row followed by one row per recurrence layer.
pub fn lesion_table(net: &Network, data: TrainData) -> Result<Vec<LesionRow>> {
    let Cell::Rhn(p) = &net.cell else {
        bail!("lesioning needs an RHN checkpoint, got {}", net.cell.family());
    };
    let base = evaluate(net, data)?.nll;
    let mut rows = vec![LesionRow {
        layer: 0,
        train_nll: base,
        delta: 0.0,
    }];
    for layer in 1..=p.depth() {
        let nll = evaluate(&lesioned(net, layer)?, data)?.nll;
        rows.push(LesionRow {
            layer,
            train_nll: nll,
            delta: nll - base,
        });
    }
    Ok(rows)
}

pub fn cmd_lesion(net: &Network, data: TrainData, dir: &std::path::Path) -> Result<Vec<LesionRow>> {
    let rows = lesion_table(net, data)?;
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.layer.to_string(), real(r.train_nll), real(r.delta)])
        .collect();
    write_table(&dir.join("lesion.csv"), LESION_HEADER, &cells)?;
    Ok(rows)
}

/// Which Jacobian a spectra report is taken of.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectraForm {
    /// Derivative of the actual step at input `x = 0`, biases included.
    Actual,
    /// Recurrent pre-activation only; standard RNNs and depth-1 RHNs.
    Recurrent,
}

impl std::str::FromStr for SpectraForm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "actual" => Ok(SpectraForm::Actual),
            "recurrent" => Ok(SpectraForm::Recurrent),
            other => Err(format!("unknown form {other:?} (actual or recurrent)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectraOptions {
    /// Random state points in addition to the zero state.
    pub random_points: usize,
    /// Random states are uniform in `[-state_scale, state_scale]`.
    pub state_scale: f64,
    pub form: SpectraForm,
    pub seed: u64,
}

impl Default for SpectraOptions {
    fn default() -> Self {
        Self {
            random_points: 0,
            state_scale: 0.5,
            form: SpectraForm::Actual,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct PointSpectrum {
    pub state: Vector,
    /// `None` if the Jacobian itself could not be computed.
    pub jacobian: Option<Matrix>,
    /// `Err` holds the message of whichever computation failed.
    pub report: Result<SpectrumReport, String>,
}

fn jacobian_at(cell: &Cell, y: &Vector, form: SpectraForm) -> rhn_core::Result<Matrix> {
    let x = Vector::zeros(cell.input_dim());
    match (form, cell) {
        (SpectraForm::Recurrent, Cell::Rnn(p)) => rnn_jacobian(p, y, JacobianForm::RecurrentOnly),
        (SpectraForm::Recurrent, Cell::Rhn(p)) => rhn_jacobian(p, y, JacobianForm::RecurrentOnly),
        _ => cell_jacobian(cell, &x, y),
    }
}

fn report_for(cell: &Cell, a: &Matrix) -> rhn_core::Result<SpectrumReport> {
    let mut rep = SpectrumReport::for_matrix(a)?;
    if let Cell::Rnn(p) = cell {
        rep.sigma_max = spectral_norm_default(&p.r.transpose())?;
        rep.gamma = p.activation.derivative_bound();
        rep.bound_gamma_sigma = rep.gamma * rep.sigma_max;
        rep.vanishing = rep.bound_gamma_sigma < 1.0;
    }
    Ok(rep)
}

/// Spectra at the zero state and `random_points` seeded random states. A
/// failure at one state point is recorded in that point and the rest still run.
pub fn spectra(cell: &Cell, opts: SpectraOptions) -> Result<Vec<PointSpectrum>> {
    let supported = match (opts.form, cell) {
        (SpectraForm::Actual, _) | (SpectraForm::Recurrent, Cell::Rnn(_)) => true,
        (SpectraForm::Recurrent, Cell::Rhn(p)) => p.depth() == 1,
        _ => false,
    };
    if !supported {
        bail!(
            "the recurrent-only form needs an RNN or a depth-1 RHN, got {} of depth {}",
            cell.family(),
            cell.depth()
        );
    }
    let n = cell.hidden_dim();
    let mut rng = RngStream::derive(opts.seed, 2);
    let mut states = vec![Vector::zeros(n)];
    for _ in 0..opts.random_points {
        states.push(uniform_vector(&mut rng, n, -opts.state_scale, opts.state_scale)?);
    }
    Ok(states
        .into_iter()
        .map(|y| match jacobian_at(cell, &y, opts.form) {
            Ok(a) => PointSpectrum {
                report: report_for(cell, &a).map_err(|e| e.to_string()),
                state: y,
                jacobian: Some(a),
            },
            Err(e) => PointSpectrum {
                state: y,
                jacobian: None,
                report: Err(e.to_string()),
            },
        })
        .collect())
}

/// Write `discs.csv`, `eigen.csv` and `summary.csv`. A point whose spectrum
/// failed gets its message in `status`, and its discs if the Jacobian exists.
pub fn write_spectra(points: &[PointSpectrum], dir: &std::path::Path) -> Result<()> {
    let (mut discs, mut eigen, mut summary) = (Vec::new(), Vec::new(), Vec::new());
    for (k, p) in points.iter().enumerate() {
        if let Some(a) = &p.jacobian {
            for d in gersgorin_discs(a)? {
                discs.push(vec![k.to_string(), d.row_index.to_string(), real(d.center.re), real(d.radius)]);
            }
        }
        match &p.report {
            Ok(r) => {
                for z in &r.eigenvalues {
                    eigen.push(vec![k.to_string(), real(z.re), real(z.im)]);
                }
                summary.push(vec![
                    k.to_string(),
                    real(r.spectral_radius),
                    real(r.jacobian_norm),
                    real(r.sigma_max),
                    real(r.gamma),
                    real(r.bound_gamma_sigma),
                    real(r.mean_radius()),
                    real(r.containment_gap()),
                    "ok".to_string(),
                ]);
            }
            Err(msg) => {
                let mut row = vec![k.to_string()];
                row.extend(std::iter::repeat(String::new()).take(7));
                row.push(msg.clone());
                summary.push(row);
            }
        }
    }
    write_table(&dir.join("discs.csv"), DISCS_HEADER, &discs)?;
    write_table(&dir.join("eigen.csv"), EIGEN_HEADER, &eigen)?;
    write_table(&dir.join("summary.csv"), SPECTRA_SUMMARY_HEADER, &summary)?;
    Ok(())
}

/// Human-readable description of a checkpoint.
pub fn inspect(path: &std::path::Path) -> Result<String> {
    let ck = Checkpoint::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let a = ck.architecture();
    let mut s = String::new();
    writeln!(s, "file: {}", path.display())?;
    writeln!(s, "format version: {VERSION} (crc ok)")?;
    writeln!(s, "family: {}", a.family)?;
    writeln!(s, "input: {:?}", a.input)?;
    writeln!(
        s,
        "input_dim {} hidden_dim {} depth {} coupled {} input_first_layer_only {} tied {} activation {}",
        a.input_dim,
        a.hidden_dim,
        a.depth,
        a.coupled,
        a.input_first_layer_only,
        a.tied,
        a.activation.as_str()
    )?;
    for (k, v) in &ck.meta {
        writeln!(s, "meta {k} = {v}")?;
    }
    for t in ck.network.tensors() {
        let dims: Vec<String> = t.dims.iter().map(usize::to_string).collect();
        writeln!(s, "tensor {:<24} {:>12}  {}", t.name, dims.join("x"), t.data.len())?;
    }
    writeln!(s, "parameters: {}", ck.network.param_count())?;
    Ok(s)
}
