//! Experiment specifications and the datasets they name.

use std::path::PathBuf;
use std::str::FromStr;

use rhn_core::cells::Activation;
use rhn_core::data::{
    load_piano_roll, load_symbol_corpus, split_symbol_corpus, synthetic_chorales, synthetic_text8, BatchStream,
    CorpusSplits, Level, PianoRollSet, SplitFractions, DEFAULT_PITCHES,
};
use rhn_core::numerics::RngStream;
use rhn_core::train::{TrainConfig, TrainData};
use rhn_core::{Batch, CellSpec, Family, InitScheme, InputKind, Network, NetworkSpec};

use crate::config::{ConfigError, ConfigResult, Flag, KeyValues};

/// Every key understood by `train`, `eval`, `gates`, `lesion` and `spectra`.
pub const EXPERIMENT_KEYS: &str = "\
model:    family (rhn|rnn|dt|dts), depth, hidden, embed (0 = hidden), coupled, input_first_layer_only,
          transform_bias (default -4 for char data, 0 otherwise), activation (tanh|logistic, rnn only),
          init (gaussian|uniform|identity), init_scale
training: lr, lr_decay, decay_start, momentum, weight_decay, clip_norm, batch_size, seq_len, max_epochs,
          patience (0 = none), dropout_embed, dropout_input, dropout_hidden, dropout_output,
          per_layer_masks, tied, seed
data:     data (file path | synthetic-text | synthetic-chorales), level (char|word|piano),
          split (train,val,test fractions), synth_size, synth_frames, pitches, lexicon, data_seed
output:   out, run_id";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataLevel {
    Char,
    Word,
    Piano,
}

impl FromStr for DataLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "char" | "character" => Ok(DataLevel::Char),
            "word" => Ok(DataLevel::Word),
            "piano" => Ok(DataLevel::Piano),
            other => Err(format!("unknown level {other:?} (char, word or piano)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    File { path: PathBuf, level: DataLevel },
    SyntheticText { chars: usize, lexicon: usize },
    SyntheticChorales { sequences: usize, frames: usize, pitches: usize },
}

impl DataSource {
    fn level(&self) -> DataLevel {
        match self {
            DataSource::File { level, .. } => *level,
            DataSource::SyntheticText { .. } => DataLevel::Char,
            DataSource::SyntheticChorales { .. } => DataLevel::Piano,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitKind {
    Gaussian,
    Uniform,
    Identity,
}

impl FromStr for InitKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gaussian" => Ok(InitKind::Gaussian),
            "uniform" => Ok(InitKind::Uniform),
            "identity" => Ok(InitKind::Identity),
            other => Err(format!("unknown init {other:?} (gaussian, uniform or identity)")),
        }
    }
}

impl InitKind {
    pub fn scheme(self, scale: f64) -> InitScheme {
        match self {
            InitKind::Gaussian => InitScheme::Gaussian { std: scale },
            InitKind::Uniform => InitScheme::Uniform { scale },
            InitKind::Identity => InitScheme::IdentityRecurrent { std: scale },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub family: Family,
    pub depth: usize,
    pub hidden: usize,
    /// Embedding width for symbol data; 0 means equal to `hidden`.
    pub embed: usize,
    pub coupled: bool,
    pub input_first_layer_only: bool,
    pub transform_bias: f64,
    pub activation: Activation,
    pub init: InitKind,
    pub init_scale: f64,
    pub train: TrainConfig,
    pub patience: Option<usize>,
    pub data: DataSource,
    pub split: SplitFractions,
    pub data_seed: u64,
    pub out: PathBuf,
    pub run_id: String,
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn activation(s: String) -> ConfigResult<Activation> {
    s.parse().map_err(|e: rhn_core::Error| invalid(e.to_string()))
}

impl ExperimentSpec {
    /// Consume experiment keys from `kv`, leaving any others in place.
    pub fn take_from(kv: &mut KeyValues) -> ConfigResult<Self> {
        let family: Family = match kv.take::<String>("family")? {
            Some(s) => s.parse().map_err(|e: rhn_core::Error| invalid(e.to_string()))?,
            None => Family::Rhn,
        };
        let data = match kv.take::<String>("data")?.as_deref() {
            None | Some("synthetic-text") => DataSource::SyntheticText {
                chars: kv.take_or("synth_size", 100_000)?,
                lexicon: kv.take_or("lexicon", 200)?,
            },
            Some("synthetic-chorales") => DataSource::SyntheticChorales {
                sequences: kv.take_or("synth_size", 64)?,
                frames: kv.take_or("synth_frames", 64)?,
                pitches: kv.take_or("pitches", DEFAULT_PITCHES)?,
            },
            Some(path) => DataSource::File {
                path: PathBuf::from(path),
                level: kv.take_or("level", DataLevel::Char)?,
            },
        };
        let split = match kv.take_list::<f64>("split")? {
            None => SplitFractions::default(),
            Some(v) if v.len() == 3 => {
                SplitFractions::new(v[0], v[1], v[2]).map_err(|e| invalid(e.to_string()))?
            }
            Some(v) => return Err(invalid(format!("split needs three fractions, got {}", v.len()))),
        };
        let default_bias = if data.level() == DataLevel::Char { -4.0 } else { 0.0 };
        let d = TrainConfig::default();
        let train = TrainConfig {
            lr: kv.take_or("lr", d.lr)?,
            lr_decay: kv.take_or("lr_decay", d.lr_decay)?,
            decay_start_epoch: kv.take_or("decay_start", d.decay_start_epoch)?,
            momentum: kv.take_or("momentum", d.momentum)?,
            weight_decay: kv.take_or("weight_decay", d.weight_decay)?,
            clip_norm: kv.take_or("clip_norm", d.clip_norm)?,
            batch_size: kv.take_or("batch_size", d.batch_size)?,
            seq_len: kv.take_or("seq_len", d.seq_len)?,
            max_epochs: kv.take_or("max_epochs", d.max_epochs)?,
            dropout_embed: kv.take_or("dropout_embed", 0.0)?,
            dropout_input: kv.take_or("dropout_input", 0.0)?,
            dropout_hidden: kv.take_or("dropout_hidden", 0.0)?,
            dropout_output: kv.take_or("dropout_output", 0.0)?,
            per_layer_hidden_masks: kv.take_or("per_layer_masks", Flag(false))?.0,
            weight_tying: kv.take_or("tied", Flag(false))?.0,
            seed: kv.take_or("seed", 0)?,
        };
        train.validate().map_err(|e| invalid(e.to_string()))?;
        let patience = match kv.take_or("patience", 0usize)? {
            0 => None,
            p => Some(p),
        };
        let spec = Self {
            family,
            depth: if family == Family::Rnn { 1 } else { kv.take_or("depth", 1)? },
            hidden: kv.take_or("hidden", 32)?,
            embed: kv.take_or("embed", 0)?,
            coupled: kv.take_or("coupled", Flag(true))?.0,
            input_first_layer_only: kv.take_or("input_first_layer_only", Flag(true))?.0,
            transform_bias: kv.take_or("transform_bias", default_bias)?,
            activation: activation(kv.take_or("activation", "tanh".to_string())?)?,
            init: kv.take_or("init", InitKind::Gaussian)?,
            init_scale: kv.take_or("init_scale", 0.1)?,
            train,
            patience,
            data,
            split,
            data_seed: kv.take_or("data_seed", 1234)?,
            out: kv.take_or("out", PathBuf::from("runs"))?,
            run_id: kv.take_or("run_id", "run".to_string())?,
        };
        if family == Family::Rnn {
            // `depth` is meaningless for a plain RNN but harmless if given.
            let _ = kv.take::<usize>("depth")?;
        }
        if spec.depth == 0 || spec.hidden == 0 {
            return Err(invalid("depth and hidden must be >= 1"));
        }
        Ok(spec)
    }

    pub fn parse(text: &str) -> ConfigResult<Self> {
        let mut kv = KeyValues::parse(text)?;
        let spec = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(spec)
    }

    pub fn init_scheme(&self) -> InitScheme {
        self.init.scheme(self.init_scale)
    }

    pub fn network_spec(&self, input: InputKind) -> NetworkSpec {
        let m = match input {
            InputKind::Frames { dim } => dim,
            InputKind::Symbols { .. } if self.embed == 0 || self.train.weight_tying => self.hidden,
            InputKind::Symbols { .. } => self.embed,
        };
        let mut cell = CellSpec::rhn(m, self.hidden, self.depth).with_family(self.family);
        cell.coupled_gates = self.coupled;
        cell.input_first_layer_only = self.input_first_layer_only;
        cell.transform_bias_init = self.transform_bias;
        NetworkSpec {
            cell,
            input,
            tied: self.train.weight_tying,
        }
    }

    /// Fresh network drawn from the spec's seed.
    pub fn build_network(&self, input: InputKind) -> rhn_core::Result<Network> {
        let mut net = self
            .network_spec(input)
            .init(self.init_scheme(), &mut RngStream::new(self.train.seed))?;
        if let rhn_core::Cell::Rnn(p) = &mut net.cell {
            p.activation = self.activation;
        }
        Ok(net)
    }
}

/// A loaded dataset, split three ways.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Symbols(CorpusSplits),
    Rolls {
        train: PianoRollSet,
        val: PianoRollSet,
        test: PianoRollSet,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (train, val or test)")),
        }
    }
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

fn split_rolls(set: PianoRollSet, split: SplitFractions) -> Dataset {
    let (a, b) = split.boundaries(set.sequences.len());
    let part = |r: std::ops::Range<usize>| PianoRollSet {
        dim: set.dim,
        sequences: set.sequences[r].to_vec(),
    };
    Dataset::Rolls {
        train: part(0..a),
        val: part(a..b),
        test: part(b..set.sequences.len()),
    }
}

impl Dataset {
    pub fn load(spec: &ExperimentSpec) -> rhn_core::Result<Self> {
        let mut rng = RngStream::new(spec.data_seed);
        Ok(match &spec.data {
            DataSource::File { path, level } => match level {
                DataLevel::Char => Dataset::Symbols(load_symbol_corpus(path, Level::Character, spec.split)?),
                DataLevel::Word => Dataset::Symbols(load_symbol_corpus(path, Level::Word, spec.split)?),
                DataLevel::Piano => split_rolls(load_piano_roll(path)?, spec.split),
            },
            DataSource::SyntheticText { chars, lexicon } => {
                let text = synthetic_text8(&mut rng, *chars, *lexicon)?;
                Dataset::Symbols(split_symbol_corpus(&text, Level::Character, spec.split)?)
            }
            DataSource::SyntheticChorales {
                sequences,
                frames,
                pitches,
            } => split_rolls(synthetic_chorales(&mut rng, *sequences, *frames, *pitches)?, spec.split),
        })
    }

    pub fn input_kind(&self) -> InputKind {
        match self {
            Dataset::Symbols(s) => InputKind::Symbols { vocab: s.vocab().len() },
            Dataset::Rolls { train, .. } => InputKind::Frames { dim: train.dim },
        }
    }

    /// Batches for one split. Symbol splits become `B` carried streams of
    /// window `T`, shrinking `B` for splits too short to fill it; roll splits
    /// become padded minibatches of whole sequences. `None` if the split is
    /// too small to score.
    pub fn prepare(&self, split: Split, batch_size: usize, seq_len: usize) -> rhn_core::Result<Option<Prepared>> {
        match self {
            Dataset::Symbols(s) => {
                let part = match split {
                    Split::Train => &s.train,
                    Split::Val => &s.val,
                    Split::Test => &s.test,
                };
                let b = batch_size.min(part.len() / (seq_len + 1));
                if b == 0 {
                    return Ok(None);
                }
                Ok(Some(Prepared::Stream(BatchStream::new(&part.symbols, b, seq_len)?)))
            }
            Dataset::Rolls { train, val, test } => {
                let part = match split {
                    Split::Train => train,
                    Split::Val => val,
                    Split::Test => test,
                };
                let batches = part.batches(batch_size)?;
                Ok((!batches.is_empty()).then_some(Prepared::Sequences(batches)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prepared {
    Stream(BatchStream),
    Sequences(Vec<Batch>),
}

impl Prepared {
    pub fn data(&self) -> TrainData<'_> {
        match self {
            Prepared::Stream(s) => TrainData::Stream(s),
            Prepared::Sequences(b) => TrainData::Sequences(b),
        }
    }
}
