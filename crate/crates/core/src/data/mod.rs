//! Corpora, vocabularies, piano rolls and truncated-BPTT batching.

mod batching;
mod corpus;
mod piano;
mod synth;

pub use batching::BatchStream;
pub use corpus::{
    load_symbol_corpus, split_symbol_corpus, tokenize, CorpusSplits, Level, SplitFractions, SymbolCorpus, Vocab, UNK,
};
pub use piano::{load_piano_roll, parse_piano_roll, PianoRoll, PianoRollSet, DEFAULT_PITCHES};
pub use synth::{synthetic_chorales, synthetic_text8, TEXT8_ALPHABET};
