use crate::error::{Error, Result};
use crate::model::{Batch, StepData};

/// `B` contiguous streams cut from one symbol sequence, read in windows of
/// `T` steps. Window `k` of stream `b` covers positions `kT..kT+T` as inputs
/// and `kT+1..kT+T+1` as targets, so consecutive windows continue each
/// stream exactly where the previous one stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStream {
    streams: Vec<Vec<usize>>,
    seq_len: usize,
    cursor: usize,
}

impl BatchStream {
    pub fn new(symbols: &[usize], batch_size: usize, seq_len: usize) -> Result<Self> {
        if batch_size == 0 || seq_len == 0 {
            return Err(Error::contract("batch size and window length must be positive"));
        }
        let need = batch_size * (seq_len + 1);
        if symbols.len() < need {
            return Err(Error::Data(format!(
                "corpus of {} symbols too small for {batch_size} streams of window {seq_len} (need {need})",
                symbols.len()
            )));
        }
        let per = symbols.len() / batch_size;
        let streams = symbols[..per * batch_size].chunks(per).map(<[usize]>::to_vec).collect();
        Ok(Self {
            streams,
            seq_len,
            cursor: 0,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.streams.len()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn stream(&self, b: usize) -> &[usize] {
        &self.streams[b]
    }

    pub fn stream_len(&self) -> usize {
        self.streams[0].len()
    }

    /// `⌊(⌊N/B⌋ − 1)/T⌋`; the final partial window is dropped.
    pub fn num_windows(&self) -> usize {
        (self.stream_len() - 1) / self.seq_len
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn reset(&mut self) {
        self.cursor = 0;
    }

    pub fn window(&self, k: usize) -> Option<Batch> {
        if k >= self.num_windows() {
            return None;
        }
        let start = k * self.seq_len;
        let column = |pos: usize| StepData::Symbols(self.streams.iter().map(|s| s[pos]).collect());
        let inputs = (start..start + self.seq_len).map(column).collect();
        let targets = (start + 1..start + self.seq_len + 1).map(column).collect();
        Some(Batch::new(inputs, targets))
    }

    /// Next window, advancing the cursor by exactly one window.
    pub fn next_window(&mut self) -> Option<Batch> {
        let w = self.window(self.cursor)?;
        self.cursor += 1;
        Some(w)
    }
}
