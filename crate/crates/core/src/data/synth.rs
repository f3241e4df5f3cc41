//! Seeded synthetic stand-ins for the chorale and text8 corpora.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

use super::piano::{PianoRoll, PianoRollSet};

/// Four-voice chorale surrogate. Each voice walks in small steps inside its
/// own register, voices stay ordered, and chords are often held for several
/// frames, so the next frame is partly predictable from the current one.
pub fn synthetic_chorales(rng: &mut RngStream, sequences: usize, frames: usize, dim: usize) -> Result<PianoRollSet> {
    if dim < 8 {
        return Err(Error::contract(format!("chorale surrogate needs at least 8 pitches, got {dim}")));
    }
    let register = |v: usize| {
        let lo = v * dim / 5;
        let hi = ((v + 2) * dim / 5).min(dim - 1);
        (lo, hi)
    };
    let steps: [i64; 7] = [-2, -1, -1, 0, 1, 1, 2];
    let mut out = Vec::with_capacity(sequences);
    for _ in 0..sequences {
        let mut pitch: Vec<usize> = (0..4)
            .map(|v| {
                let (lo, hi) = register(v);
                lo + rng.below(hi - lo + 1)
            })
            .collect();
        let mut m = Matrix::zeros(frames, dim);
        for t in 0..frames {
            if t > 0 && rng.uniform01() >= 0.4 {
                for v in 0..4 {
                    let (lo, hi) = register(v);
                    let p = pitch[v] as i64 + steps[rng.below(steps.len())];
                    pitch[v] = p.clamp(lo as i64, hi as i64) as usize;
                }
                for v in 1..4 {
                    if pitch[v] < pitch[v - 1] {
                        pitch[v] = pitch[v - 1];
                    }
                }
            }
            for &p in &pitch {
                m[(t, p)] = 1.0;
            }
        }
        out.push(PianoRoll::new(m)?);
    }
    Ok(PianoRollSet { dim, sequences: out })
}

pub const TEXT8_ALPHABET: &[u8; 27] = b"abcdefghijklmnopqrstuvwxyz ";

/// Text over lowercase letters and space. Words come from a seeded lexicon
/// whose spellings follow a letter-bigram chain; word choice is Zipfian with
/// a preferred successor for each word, giving structure at both scales.
pub fn synthetic_text8(rng: &mut RngStream, chars: usize, lexicon_size: usize) -> Result<Vec<u8>> {
    if lexicon_size < 26 {
        return Err(Error::contract("lexicon needs at least one word per letter"));
    }
    let favoured: Vec<[usize; 3]> = (0..26).map(|_| [rng.below(26), rng.below(26), rng.below(26)]).collect();
    let lexicon: Vec<Vec<u8>> = (0..lexicon_size)
        .map(|i| {
            let len = 2 + rng.below(7);
            let mut w = vec![(i % 26) as u8];
            while w.len() < len {
                let prev = *w.last().unwrap() as usize;
                let next = if rng.uniform01() < 0.7 {
                    favoured[prev][rng.below(3)]
                } else {
                    rng.below(26)
                };
                w.push(next as u8);
            }
            w.into_iter().map(|c| b'a' + c).collect()
        })
        .collect();
    let successor: Vec<usize> = (0..lexicon_size).map(|_| rng.below(lexicon_size)).collect();
    let cumulative: Vec<f64> = (1..=lexicon_size)
        .scan(0.0, |acc, r| {
            *acc += 1.0 / r as f64;
            Some(*acc)
        })
        .collect();
    let total = cumulative[lexicon_size - 1];

    let mut text = Vec::with_capacity(chars + 16);
    let mut word = 0usize;
    while text.len() < chars {
        word = if rng.uniform01() < 0.3 {
            successor[word]
        } else {
            let u = rng.uniform01() * total;
            cumulative.partition_point(|&c| c <= u).min(lexicon_size - 1)
        };
        text.extend_from_slice(&lexicon[word]);
        text.push(b' ');
    }
    text.truncate(chars);
    Ok(text)
}
