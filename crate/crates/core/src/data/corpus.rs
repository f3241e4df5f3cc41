use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    /// One symbol per byte.
    Character,
    /// Whitespace-separated tokens.
    Word,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Character => "char",
            Level::Word => "word",
        }
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "char" | "character" => Ok(Level::Character),
            "word" => Ok(Level::Word),
            other => Err(Error::contract(format!("unknown corpus level {other:?} (expected char or word)"))),
        }
    }
}

pub const UNK: &str = "<unk>";

/// Symbol table in first-appearance order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    level: Level,
    tokens: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    unk: Option<usize>,
}

impl Vocab {
    pub fn new(level: Level) -> Self {
        Self {
            level,
            tokens: Vec::new(),
            index: HashMap::new(),
            unk: None,
        }
    }

    /// Vocabulary of every token in `tokens`, indices in first-appearance order.
    pub fn build<'a>(level: Level, tokens: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let mut v = Self::new(level);
        for t in tokens {
            v.insert(t);
        }
        v
    }

    fn insert(&mut self, token: &[u8]) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_vec());
        self.index.insert(token.to_vec(), i);
        i
    }

    /// Append the unknown marker if it is not present yet.
    pub fn reserve_unknown(&mut self) -> usize {
        if let Some(u) = self.unk {
            return u;
        }
        let u = self.tokens.len();
        self.tokens.push(UNK.as_bytes().to_vec());
        self.unk = Some(u);
        u
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn unknown(&self) -> Option<usize> {
        self.unk
    }

    pub fn token(&self, i: usize) -> Option<&[u8]> {
        self.tokens.get(i).map(Vec::as_slice)
    }

    pub fn get(&self, token: &[u8]) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or the unknown marker.
    pub fn lookup(&self, token: &[u8]) -> Option<usize> {
        self.get(token).or(self.unk)
    }

    /// Tokenize and map text to indices. Unseen tokens need an unknown marker.
    pub fn encode(&self, text: &[u8]) -> Result<Vec<usize>> {
        tokenize(self.level, text)?
            .into_iter()
            .map(|t| {
                self.lookup(t)
                    .ok_or_else(|| Error::Data(format!("token {:?} not in vocabulary", String::from_utf8_lossy(t))))
            })
            .collect()
    }

    /// Inverse of `encode`: bytes concatenated, words joined by single spaces.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<u8>> {
        let sep: &[u8] = match self.level {
            Level::Character => b"",
            Level::Word => b" ",
        };
        let mut out = Vec::new();
        for (k, &i) in ids.iter().enumerate() {
            let t = self
                .token(i)
                .ok_or_else(|| Error::Data(format!("index {i} outside vocabulary of {}", self.len())))?;
            if k > 0 {
                out.extend_from_slice(sep);
            }
            out.extend_from_slice(t);
        }
        Ok(out)
    }
}

pub fn tokenize(level: Level, text: &[u8]) -> Result<Vec<&[u8]>> {
    match level {
        Level::Character => Ok(text.chunks(1).collect()),
        Level::Word => {
            let s = std::str::from_utf8(text).map_err(|e| Error::Data(format!("word-level corpus is not UTF-8: {e}")))?;
            Ok(s.split_whitespace().map(str::as_bytes).collect())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymbolCorpus {
    pub symbols: Vec<usize>,
    pub vocab: Vocab,
}

impl SymbolCorpus {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn level(&self) -> Level {
        self.vocab.level()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.9,
            val: 0.05,
            test: 0.05,
        }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "split fractions must be in [0, 1] and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// Boundaries `(end of train, end of val)` for `n` items, rounded to the
    /// nearest symbol so that e.g. 0.9 of 100 is exactly 90.
    pub fn boundaries(&self, n: usize) -> (usize, usize) {
        let nf = n as f64;
        let a = ((nf * self.train).round() as usize).min(n);
        let b = ((nf * (self.train + self.val)).round() as usize).clamp(a, n);
        (a, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplits {
    pub train: SymbolCorpus,
    pub val: SymbolCorpus,
    pub test: SymbolCorpus,
}

impl CorpusSplits {
    pub fn vocab(&self) -> &Vocab {
        &self.train.vocab
    }
}

/// Split raw text into contiguous train/val/test parts and index them with a
/// vocabulary built from the training part only.
///
/// Word-level vocabularies always reserve `<unk>`. Character vocabularies
/// gain it only if validation or test contain a byte unseen in training.
pub fn split_symbol_corpus(text: &[u8], level: Level, split: SplitFractions) -> Result<CorpusSplits> {
    split.validate()?;
    let tokens = tokenize(level, text)?;
    if tokens.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    let (a, b) = split.boundaries(tokens.len());
    let mut vocab = Vocab::build(level, tokens[..a].iter().copied());
    if level == Level::Word || tokens[a..].iter().any(|t| vocab.get(t).is_none()) {
        vocab.reserve_unknown();
    }
    let index = |ts: &[&[u8]]| -> Vec<usize> { ts.iter().map(|t| vocab.lookup(t).expect("unknown reserved")).collect() };
    let (tr, va, te) = (index(&tokens[..a]), index(&tokens[a..b]), index(&tokens[b..]));
    let wrap = |symbols| SymbolCorpus {
        symbols,
        vocab: vocab.clone(),
    };
    Ok(CorpusSplits {
        train: wrap(tr),
        val: wrap(va),
        test: wrap(te),
    })
}

pub fn load_symbol_corpus(path: impl AsRef<Path>, level: Level, split: SplitFractions) -> Result<CorpusSplits> {
    let path = path.as_ref();
    let text = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    split_symbol_corpus(&text, level, split).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}
