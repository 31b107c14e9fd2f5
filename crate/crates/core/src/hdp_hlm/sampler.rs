//! Blocked sampling of word segmentations: word-level semi-Markov backward
//! filtering followed by forward sampling, with letter alignments drawn from
//! the inner dynamic program.

use log::warn;
use rand::Rng;

use super::params::GlobalParams;
use super::segment::LetterScores;
use crate::corpus::FeatureMatrix;
use crate::dists::{self, logaddexp};
use crate::error::{Error, Result};
use crate::segmentation::{Segment, WordSequence};

/// Every admissible word segment likelihood of one utterance, computed once
/// per (utterance, parameter state).
pub struct SegmentTable {
    n_frames: usize,
    n_words: usize,
    /// Per (word, start): offset into `values` and the admissible span.
    index: Vec<(usize, usize)>,
    /// `values[offset + d - 1]` = log P(frames start..start+d | word)
    values: Vec<f64>,
}

impl SegmentTable {
    pub fn new(scores: &LetterScores<'_>, params: &GlobalParams) -> Self {
        let t_len = scores.n_frames();
        let n_words = params.n_words();
        let mut index = Vec::with_capacity(n_words * t_len);
        let mut values = Vec::new();
        for spelling in &params.wm.spellings {
            for start in 0..t_len {
                let rows = scores.word_forward(spelling, start);
                let last = rows.last().expect("nonempty spelling");
                let span = last.len() - 1;
                index.push((values.len(), span));
                values.extend_from_slice(&last[1..]);
            }
        }
        Self {
            n_frames: t_len,
            n_words,
            index,
            values,
        }
    }

    #[inline]
    pub fn span(&self, word: usize, start: usize) -> usize {
        self.index[word * self.n_frames + start].1
    }

    #[inline]
    pub fn get(&self, word: usize, start: usize, len: usize) -> f64 {
        let (off, span) = self.index[word * self.n_frames + start];
        if len == 0 || len > span {
            f64::NEG_INFINITY
        } else {
            self.values[off + len - 1]
        }
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }
}

/// Backward messages of the word-level semi-Markov chain.
pub struct Backward {
    n_words: usize,
    /// `beta[t * (V + 1) + prev]`: log P(frames t.. | previous word `prev`);
    /// `prev == V` is the sentence start.
    beta: Vec<f64>,
    /// `entry[t * V + j]`: log P(frames t.. | a segment of word j starts at t).
    entry: Vec<f64>,
}

impl Backward {
    pub fn new(table: &SegmentTable, log_bigram: &[Vec<f64>]) -> Self {
        let t_len = table.n_frames;
        let v = table.n_words;
        let mut beta = vec![f64::NEG_INFINITY; (t_len + 1) * (v + 1)];
        let mut entry = vec![f64::NEG_INFINITY; t_len * v];
        beta[t_len * (v + 1)..].fill(0.0);
        for t in (0..t_len).rev() {
            for j in 0..v {
                let mut acc = f64::NEG_INFINITY;
                for d in 1..=table.span(j, t) {
                    let s = table.get(j, t, d);
                    let b = beta[(t + d) * (v + 1) + j];
                    if s > f64::NEG_INFINITY && b > f64::NEG_INFINITY {
                        acc = logaddexp(acc, s + b);
                    }
                }
                entry[t * v + j] = acc;
            }
            for prev in 0..=v {
                let row = &log_bigram[prev];
                let mut acc = f64::NEG_INFINITY;
                for j in 0..v {
                    let e = entry[t * v + j];
                    if e > f64::NEG_INFINITY {
                        acc = logaddexp(acc, row[j] + e);
                    }
                }
                beta[t * (v + 1) + prev] = acc;
            }
        }
        Self {
            n_words: v,
            beta,
            entry,
        }
    }

    /// log P(all frames) under the truncated model.
    pub fn log_marginal(&self) -> f64 {
        self.beta[self.n_words]
    }

    fn beta(&self, t: usize, prev: usize) -> f64 {
        self.beta[t * (self.n_words + 1) + prev]
    }
}

/// log P(frames | 𝒢), summing over every segmentation and alignment.
pub fn log_marginal(frames: &FeatureMatrix, params: &GlobalParams) -> f64 {
    let scores = LetterScores::new(frames, &params.am);
    let table = SegmentTable::new(&scores, params);
    Backward::new(&table, &params.lm.log_bigram()).log_marginal()
}

/// Draws a segmentation with letter alignments from its exact posterior
/// given the frames and frozen parameters.
pub fn sample_word_sequence<R: Rng + ?Sized>(
    utterance_id: &str,
    frames: &FeatureMatrix,
    params: &GlobalParams,
    max_utterance_len: usize,
    rng: &mut R,
) -> Result<WordSequence> {
    let t_len = frames.n_frames();
    if t_len > max_utterance_len {
        return Err(Error::UtteranceTooLong {
            utterance: utterance_id.to_string(),
            frames: t_len,
            max: max_utterance_len,
        });
    }
    let scores = LetterScores::new(frames, &params.am);
    let table = SegmentTable::new(&scores, params);
    let log_bigram = params.lm.log_bigram();
    let bw = Backward::new(&table, &log_bigram);
    let v = params.n_words();

    if bw.log_marginal() == f64::NEG_INFINITY {
        warn!("utterance {utterance_id}: no admissible segmentation, falling back to one truncated word");
        return fallback_single_word(utterance_id, &scores, params, rng);
    }

    let mut segments = Vec::new();
    let mut t = 0;
    let mut prev = v;
    let mut weights = vec![0.0; v];
    while t < t_len {
        for (j, w) in weights.iter_mut().enumerate() {
            *w = log_bigram[prev][j] + bw.entry[t * v + j];
        }
        let word = dists::sample_log_categorical(&weights, rng).expect("reachable state");
        let dur_weights: Vec<f64> = (1..=table.span(word, t))
            .map(|d| table.get(word, t, d) + bw.beta(t + d, word))
            .collect();
        let d = 1 + dists::sample_log_categorical(&dur_weights, rng).expect("reachable duration");
        let spelling = &params.wm.spellings[word];
        let letters = scores
            .sample_alignment(spelling, t, d, rng)
            .expect("segment with positive likelihood has an alignment");
        segments.push(Segment {
            word,
            start: t,
            end: t + d,
            letters,
        });
        prev = word;
        t += d;
    }
    Ok(WordSequence::new(segments))
}

/// Used when no tiling has positive probability: the whole utterance becomes
/// one token of the word whose (prefix-truncated) spelling explains it best
/// with every letter kept at least one frame long.
fn fallback_single_word<R: Rng + ?Sized>(
    utterance_id: &str,
    scores: &LetterScores<'_>,
    params: &GlobalParams,
    rng: &mut R,
) -> Result<WordSequence> {
    let t_len = scores.n_frames();
    let mut best: Option<(f64, usize, Vec<usize>)> = None;
    for (i, spelling) in params.wm.spellings.iter().enumerate() {
        let truncated: Vec<usize> = spelling.iter().copied().take(t_len).collect();
        let rows = scores.word_forward(&truncated, 0);
        let ll = rows.last().and_then(|r| r.get(t_len)).copied().unwrap_or(f64::NEG_INFINITY);
        if ll > f64::NEG_INFINITY && best.as_ref().is_none_or(|b| ll > b.0) {
            best = Some((ll, i, truncated));
        }
    }
    let (_, word, spelling) = best.ok_or_else(|| Error::Tiling {
        utterance: utterance_id.to_string(),
        message: "no word can cover the utterance".into(),
    })?;
    let letters = scores.sample_alignment(&spelling, 0, t_len, rng).expect("positive likelihood");
    Ok(WordSequence::new(vec![Segment {
        word,
        start: 0,
        end: t_len,
        letters,
    }]))
}

/// log P(frames, segmentation | 𝒢) for a complete segmentation with
/// alignments.
pub fn joint_loglik(frames: &FeatureMatrix, seq: &WordSequence, params: &GlobalParams) -> f64 {
    let scores = LetterScores::new(frames, &params.am);
    let mut prev = params.lm.start_row();
    let mut total = 0.0;
    for seg in &seq.segments {
        total += params.lm.bigram[prev][seg.word].ln();
        let mut t = seg.start;
        for l in &seg.letters {
            total += scores.letter(l.letter, t, t + l.duration);
            t += l.duration;
        }
        prev = seg.word;
    }
    total
}
