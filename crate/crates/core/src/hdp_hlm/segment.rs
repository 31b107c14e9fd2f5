//! Segment likelihoods: the inner letter-duration dynamic program.

use rand::Rng;

use super::params::{AcousticModel, GlobalParams};
use crate::corpus::FeatureMatrix;
use crate::dists::{self, logaddexp};
use crate::segmentation::LetterSpan;

/// Per-letter cumulative frame log-likelihoods of one utterance, so that the
/// score of letter `j` over frames `a..b` is an O(1) lookup.
pub struct LetterScores<'a> {
    am: &'a AcousticModel,
    n_frames: usize,
    /// `prefix[j * (T + 1) + t]` = Σ_{s<t} log N(y_s; letter j)
    prefix: Vec<f64>,
}

impl<'a> LetterScores<'a> {
    pub fn new(frames: &FeatureMatrix, am: &'a AcousticModel) -> Self {
        let t_len = frames.n_frames();
        let stride = t_len + 1;
        let mut prefix = vec![0.0; am.n_letters() * stride];
        for (j, g) in am.emissions.iter().enumerate() {
            let row = &mut prefix[j * stride..(j + 1) * stride];
            for t in 0..t_len {
                row[t + 1] = row[t] + g.logpdf(frames.row(t));
            }
        }
        Self {
            am,
            n_frames: t_len,
            prefix,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// Log-likelihood of letter `j` occupying exactly frames `a..b`,
    /// duration term included.
    #[inline]
    pub fn letter(&self, j: usize, a: usize, b: usize) -> f64 {
        let base = j * (self.n_frames + 1);
        self.am.duration_log_pmf(j, b - a) + self.prefix[base + b] - self.prefix[base + a]
    }

    /// Forward table of the inner DP for `spelling` starting at frame `start`.
    ///
    /// Row `k` holds, for every end offset `e` (frames `start..start+e`), the
    /// log-probability that letters `0..=k` exactly consume those frames.
    /// Rows are `span + 1` long, where `span` is the largest admissible
    /// segment length from `start`.
    pub fn word_forward(&self, spelling: &[usize], start: usize) -> Vec<Vec<f64>> {
        let dmax = self.am.max_letter_duration;
        let span = (spelling.len() * dmax).min(self.n_frames - start);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(spelling.len());
        let mut first = vec![f64::NEG_INFINITY; span + 1];
        for e in 1..=span.min(dmax) {
            first[e] = self.letter(spelling[0], start, start + e);
        }
        rows.push(first);
        for (k, &j) in spelling.iter().enumerate().skip(1) {
            let prev = &rows[k - 1];
            let mut cur = vec![f64::NEG_INFINITY; span + 1];
            for e in (k + 1)..=span.min((k + 1) * dmax) {
                let mut acc = f64::NEG_INFINITY;
                let lo = e.saturating_sub(dmax).max(k);
                for s in lo..e {
                    let p = prev[s];
                    if p > f64::NEG_INFINITY {
                        acc = logaddexp(acc, p + self.letter(j, start + s, start + e));
                    }
                }
                cur[e] = acc;
            }
            rows.push(cur);
        }
        rows
    }

    /// Draws letter durations for `spelling` occupying exactly
    /// `start..start+len`, from their conditional given the segment.
    pub fn sample_alignment<R: Rng + ?Sized>(
        &self,
        spelling: &[usize],
        start: usize,
        len: usize,
        rng: &mut R,
    ) -> Option<Vec<LetterSpan>> {
        let rows = self.word_forward(spelling, start);
        if rows.last()?.get(len).is_none_or(|v| *v == f64::NEG_INFINITY) {
            return None;
        }
        let dmax = self.am.max_letter_duration;
        let mut spans = vec![LetterSpan { letter: 0, duration: 0 }; spelling.len()];
        let mut end = len;
        for k in (1..spelling.len()).rev() {
            let lo = end.saturating_sub(dmax).max(k);
            let weights: Vec<f64> = (lo..end)
                .map(|s| rows[k - 1][s] + self.letter(spelling[k], start + s, start + end))
                .collect();
            let s = lo + dists::sample_log_categorical(&weights, rng)?;
            spans[k] = LetterSpan {
                letter: spelling[k],
                duration: end - s,
            };
            end = s;
        }
        spans[0] = LetterSpan {
            letter: spelling[0],
            duration: end,
        };
        Some(spans)
    }
}

/// `log P(frames | word)`, marginalizing every letter-duration composition.
/// Returns `-inf` when the segment is shorter than the spelling or longer
/// than the spelling can stretch.
pub fn segment_loglik(word: usize, frames: &FeatureMatrix, params: &GlobalParams) -> f64 {
    let spelling = &params.wm.spellings[word];
    let len = frames.n_frames();
    if len < spelling.len() || len > spelling.len() * params.am.max_letter_duration {
        return f64::NEG_INFINITY;
    }
    let scores = LetterScores::new(frames, &params.am);
    scores.word_forward(spelling, 0).last().expect("nonempty spelling")[len]
}
