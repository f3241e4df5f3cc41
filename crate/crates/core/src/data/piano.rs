//! Piano-roll sequences in a small CSV format.
//!
//! ```text
//! 4
//! 0,1,0,0
//! 0,1,1,0
//!
//! 1,0,0,0
//! ```
//!
//! The first non-empty line is the pitch dimension `D`. Every following
//! non-empty line is one frame of `D` cells in `{0, 1}`. Blank lines
//! separate sequences. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Batch, StepData};
use crate::numerics::{Matrix, Vector};

pub const DEFAULT_PITCHES: usize = 88;

/// One sequence of binary frames, `T × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct PianoRoll {
    pub frames: Matrix,
}

impl PianoRoll {
    pub fn new(frames: Matrix) -> Result<Self> {
        if let Some(v) = frames.as_slice().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("piano roll entries must be 0 or 1, found {v}")));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// Next-step prediction pairs `(frame_t, frame_{t+1})`.
    pub fn pairs(&self) -> Vec<(Vector, Vector)> {
        (1..self.len())
            .map(|t| (self.frames.row_vector(t - 1), self.frames.row_vector(t)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PianoRollSet {
    pub dim: usize,
    pub sequences: Vec<PianoRoll>,
}

impl PianoRollSet {
    pub fn num_pairs(&self) -> usize {
        self.sequences.iter().map(|s| s.len().saturating_sub(1)).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", self.dim);
        for (k, seq) in self.sequences.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            for t in 0..seq.len() {
                let row: Vec<&str> = seq.frames.row(t).iter().map(|&v| if v == 1.0 { "1" } else { "0" }).collect();
                let _ = writeln!(out, "{}", row.join(","));
            }
        }
        out
    }

    /// Minibatches of up to `batch_size` sequences, padded to the longest
    /// member. Padded steps are marked invalid and contribute no loss.
    pub fn batches(&self, batch_size: usize) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        let usable: Vec<&PianoRoll> = self.sequences.iter().filter(|s| s.len() >= 2).collect();
        Ok(usable.chunks(batch_size).map(|group| pad_batch(group, self.dim)).collect())
    }
}

fn pad_batch(group: &[&PianoRoll], dim: usize) -> Batch {
    let steps = group.iter().map(|s| s.len() - 1).max().unwrap_or(0);
    let b = group.len();
    let mut inputs = Vec::with_capacity(steps);
    let mut targets = Vec::with_capacity(steps);
    let mut valid = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut x = Matrix::zeros(b, dim);
        let mut y = Matrix::zeros(b, dim);
        let mut ok = vec![false; b];
        for (i, s) in group.iter().enumerate() {
            if t + 1 < s.len() {
                x.row_mut(i).copy_from_slice(s.frames.row(t));
                y.row_mut(i).copy_from_slice(s.frames.row(t + 1));
                ok[i] = true;
            }
        }
        inputs.push(StepData::Frames(x));
        targets.push(StepData::Frames(y));
        valid.push(ok);
    }
    Batch {
        inputs,
        targets,
        valid: Some(valid),
    }
}

pub fn parse_piano_roll(text: &str) -> Result<PianoRollSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim_start().starts_with('#'));
    let dim = loop {
        match lines.next() {
            None => return Err(Error::Data("empty piano-roll file".into())),
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((no, l)) => {
                break l
                    .trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| Error::Data(format!("line {}: expected pitch dimension, got {l:?}", no + 1)))?
            }
        }
    };
    let mut sequences = Vec::new();
    let mut current: Vec<f64> = Vec::new();
    let flush = |cur: &mut Vec<f64>, seqs: &mut Vec<PianoRoll>| -> Result<()> {
        if !cur.is_empty() {
            let t = cur.len() / dim;
            seqs.push(PianoRoll::new(Matrix::from_vec(t, dim, std::mem::take(cur))?)?);
        }
        Ok(())
    };
    for (no, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            flush(&mut current, &mut sequences)?;
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != dim {
            return Err(Error::Data(format!("line {}: ragged row of {} cells, expected {dim}", no + 1, cells.len())));
        }
        for c in cells {
            current.push(match c {
                "0" => 0.0,
                "1" => 1.0,
                other => return Err(Error::Data(format!("line {}: non-binary cell {other:?}", no + 1))),
            });
        }
    }
    flush(&mut current, &mut sequences)?;
    Ok(PianoRollSet { dim, sequences })
}

pub fn load_piano_roll(path: impl AsRef<Path>) -> Result<PianoRollSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    parse_piano_roll(&text).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}
