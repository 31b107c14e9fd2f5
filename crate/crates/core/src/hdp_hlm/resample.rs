//! Conjugate resampling of the acoustic, word and language models given the
//! current segmentations.

use rand::Rng;

use super::params::{AcousticModel, GaussStats, GlobalParams, HlmHyper, LanguageModel, Mode, NiwPrior, SpellingSource, WordModel};
use super::segment::LetterScores;
use crate::corpus::FeatureMatrix;
use crate::dists::{self, logaddexp};
use crate::segmentation::WordSequence;

/// Redraws every letter Gaussian from its NIW posterior and every duration
/// rate from its Gamma posterior. Letters without frames fall back to the
/// prior.
pub fn resample_acoustic<R: Rng + ?Sized>(
    frames: &[&FeatureMatrix],
    seqs: &[WordSequence],
    am: &AcousticModel,
    prior: &NiwPrior,
    dur_shape: f64,
    dur_rate: f64,
    rng: &mut R,
) -> AcousticModel {
    let j = am.n_letters();
    let mut stats: Vec<GaussStats> = (0..j).map(|_| GaussStats::new(prior.dim())).collect();
    let mut dur_sum = vec![0usize; j];
    let mut dur_count = vec![0usize; j];
    for (utt, seq) in frames.iter().zip(seqs) {
        for seg in &seq.segments {
            let mut t = seg.start;
            for l in &seg.letters {
                for s in t..t + l.duration {
                    stats[l.letter].push(utt.row(s));
                }
                dur_sum[l.letter] += l.duration;
                dur_count[l.letter] += 1;
                t += l.duration;
            }
        }
    }
    let emissions = stats.iter().map(|s| prior.posterior(s).sample(rng)).collect();
    let rates = (0..j)
        .map(|l| {
            dists::gamma_draw(dur_shape + dur_sum[l] as f64, dur_rate + dur_count[l] as f64, rng)
                .max(1e-6)
        })
        .collect();
    AcousticModel::new(emissions, rates, am.max_letter_duration)
}

/// Weak-limit HDP update for a family of Dirichlet rows sharing one base
/// measure: auxiliary table counts, then the base, then every row.
/// `counts[i][j]` are transitions out of context `i`.
pub fn resample_hdp_rows<R: Rng + ?Sized>(
    counts: &[Vec<u32>],
    base: &[f64],
    alpha: f64,
    gamma: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = base.len();
    let mut tables = vec![0u32; k];
    for row in counts {
        for (j, &n) in row.iter().enumerate() {
            let ab = alpha * base[j];
            for c in 0..n {
                if rng.random::<f64>() < ab / (ab + c as f64) {
                    tables[j] += 1;
                }
            }
        }
    }
    let base_params: Vec<f64> = tables.iter().map(|&m| gamma / k as f64 + m as f64).collect();
    let new_base = dists::dirichlet(&base_params, rng);
    let rows = counts
        .iter()
        .map(|row| {
            let params: Vec<f64> = row
                .iter()
                .zip(&new_base)
                .map(|(&n, &b)| (alpha * b).max(1e-300) + n as f64)
                .collect();
            dists::dirichlet(&params, rng)
        })
        .collect();
    (new_base, rows)
}

/// Word bigram counts with the sentence start as the last context row.
pub fn word_transition_counts(seqs: &[WordSequence], n_words: usize) -> Vec<Vec<u32>> {
    let mut counts = vec![vec![0u32; n_words]; n_words + 1];
    for seq in seqs {
        let mut prev = n_words;
        for w in seq.words() {
            counts[prev][w] += 1;
            prev = w;
        }
    }
    counts
}

/// Letter bigram counts over a set of spellings, word-initial context last.
pub fn letter_transition_counts<'a>(spellings: impl Iterator<Item = &'a Vec<usize>>, n_letters: usize) -> Vec<Vec<u32>> {
    let mut counts = vec![vec![0u32; n_letters]; n_letters + 1];
    for s in spellings {
        let mut prev = n_letters;
        for &l in s {
            counts[prev][l] += 1;
            prev = l;
        }
    }
    counts
}

/// Draws a spelling from the word model's letter chain: geometric length
/// with the given mean, capped at `max_letters`.
pub fn draw_spelling<R: Rng + ?Sized>(wm: &WordModel, mean_letters: f64, max_letters: usize, rng: &mut R) -> Vec<usize> {
    let stop = 1.0 / mean_letters;
    let mut len = 1;
    while len < max_letters && rng.random::<f64>() >= stop {
        len += 1;
    }
    let mut prev = wm.start_row();
    (0..len)
        .map(|_| {
            let l = dists::sample_categorical(&wm.letter_bigram[prev], rng).unwrap_or(0);
            prev = l;
            l
        })
        .collect()
}

/// Samples a letter string for frames `start..end` from the letter-level
/// semi-Markov model (letter bigram transitions, at most `max_letters`
/// letters), ignoring any current spelling.
pub fn sample_letter_string<R: Rng + ?Sized>(
    scores: &LetterScores<'_>,
    start: usize,
    end: usize,
    log_letter_bigram: &[Vec<f64>],
    max_letters: usize,
    dmax: usize,
    rng: &mut R,
) -> Option<Vec<usize>> {
    let n = end - start;
    let j_count = log_letter_bigram[0].len();
    let ctx = j_count + 1;
    let lmax = max_letters;
    // beta[(t * (lmax + 1) + c) * ctx + prev]
    let idx = |t: usize, c: usize, prev: usize| (t * (lmax + 1) + c) * ctx + prev;
    let mut beta = vec![f64::NEG_INFINITY; (n + 1) * (lmax + 1) * ctx];
    for c in 0..=lmax {
        for prev in 0..ctx {
            beta[idx(n, c, prev)] = 0.0;
        }
    }
    // entry[(t * lmax + c) * J + j]: a letter j starting at t as letter c.
    let mut entry = vec![f64::NEG_INFINITY; n * lmax * j_count];
    for t in (0..n).rev() {
        for c in 0..lmax {
            for j in 0..j_count {
                let mut acc = f64::NEG_INFINITY;
                for d in 1..=dmax.min(n - t) {
                    let b = beta[idx(t + d, c + 1, j)];
                    if b > f64::NEG_INFINITY {
                        acc = logaddexp(acc, scores.letter(j, start + t, start + t + d) + b);
                    }
                }
                entry[(t * lmax + c) * j_count + j] = acc;
            }
            for prev in 0..ctx {
                let row = &log_letter_bigram[prev];
                let mut acc = f64::NEG_INFINITY;
                for j in 0..j_count {
                    let e = entry[(t * lmax + c) * j_count + j];
                    if e > f64::NEG_INFINITY {
                        acc = logaddexp(acc, row[j] + e);
                    }
                }
                beta[idx(t, c, prev)] = acc;
            }
        }
    }
    if beta[idx(0, 0, j_count)] == f64::NEG_INFINITY {
        return None;
    }
    let mut out = Vec::new();
    let (mut t, mut c, mut prev) = (0, 0, j_count);
    let mut w = vec![0.0; j_count];
    while t < n {
        for (j, wj) in w.iter_mut().enumerate() {
            *wj = log_letter_bigram[prev][j] + entry[(t * lmax + c) * j_count + j];
        }
        let j = dists::sample_log_categorical(&w, rng)?;
        let dw: Vec<f64> = (1..=dmax.min(n - t))
            .map(|d| scores.letter(j, start + t, start + t + d) + beta[idx(t + d, c + 1, j)])
            .collect();
        let d = 1 + dists::sample_log_categorical(&dw, rng)?;
        out.push(j);
        t += d;
        c += 1;
        prev = j;
    }
    Some(out)
}

/// Resamples the language model, and in double-articulation mode the word
/// model and spellings, given the current segmentations and acoustic model.
///
/// A word owning at least one segment takes the letter string sampled from
/// one uniformly chosen owning segment; unused words are redrawn from the
/// updated letter chain.
pub fn resample_language_and_word_models<R: Rng + ?Sized>(
    frames: &[&FeatureMatrix],
    seqs: &[WordSequence],
    params: &GlobalParams,
    am: &AcousticModel,
    hyper: &HlmHyper,
    rng: &mut R,
) -> (LanguageModel, WordModel) {
    let v = params.n_words();
    let lm_counts = word_transition_counts(seqs, v);
    let (lm_base, lm_rows) = resample_hdp_rows(&lm_counts, &params.lm.base, params.lm.alpha, params.lm.gamma, rng);
    let lm = LanguageModel {
        bigram: lm_rows,
        base: lm_base,
        alpha: params.lm.alpha,
        gamma: params.lm.gamma,
    };

    if params.mode == Mode::FlatHsmm {
        return (lm, params.wm.clone());
    }

    // (utterance, segment) pairs owned by each word
    let mut owners: Vec<Vec<(usize, usize)>> = vec![Vec::new(); v];
    for (u, seq) in seqs.iter().enumerate() {
        for (s, seg) in seq.segments.iter().enumerate() {
            owners[seg.word].push((u, s));
        }
    }
    let log_letter_bigram: Vec<Vec<f64>> = params
        .wm
        .letter_bigram
        .iter()
        .map(|r| r.iter().map(|p| p.ln()).collect())
        .collect();
    let mut spellings = params.wm.spellings.clone();
    for (word, own) in owners.iter().enumerate() {
        if own.is_empty() {
            continue;
        }
        let (u, s) = own[rng.random_range(0..own.len())];
        let seg = &seqs[u].segments[s];
        let scores = LetterScores::new(frames[u], am);
        if let Some(letters) = sample_letter_string(
            &scores,
            seg.start,
            seg.end,
            &log_letter_bigram,
            hyper.max_word_letters,
            am.max_letter_duration,
            rng,
        ) {
            spellings[word] = letters;
        }
    }

    let j = am.n_letters();
    let used = owners.iter().zip(&spellings).filter(|(o, _)| !o.is_empty()).map(|(_, s)| s);
    let wm_counts = letter_transition_counts(used, j);
    let (wm_base, wm_rows) = resample_hdp_rows(&wm_counts, &params.wm.base, params.wm.alpha, params.wm.gamma, rng);
    let mut wm = WordModel {
        spellings,
        letter_bigram: wm_rows,
        base: wm_base,
        alpha: params.wm.alpha,
        gamma: params.wm.gamma,
    };
    let alignments: Vec<Vec<usize>> = match hyper.unused_spellings {
        SpellingSource::Prior => Vec::new(),
        SpellingSource::Alignments => seqs.iter().map(|s| s.letters()).filter(|l| !l.is_empty()).collect(),
    };
    for (word, own) in owners.iter().enumerate() {
        if own.is_empty() {
            wm.spellings[word] = if alignments.is_empty() {
                draw_spelling(&wm, hyper.mean_word_letters, hyper.max_word_letters, rng)
            } else {
                alignment_substring(&alignments, hyper.mean_word_letters, hyper.max_word_letters, rng)
            };
        }
    }
    (lm, wm)
}

/// A substring of a uniformly chosen letter alignment, starting at a
/// uniform position, with geometric length (the given mean, capped at
/// `max_letters` and at the alignment's end).
pub fn alignment_substring<R: Rng + ?Sized>(
    alignments: &[Vec<usize>],
    mean_letters: f64,
    max_letters: usize,
    rng: &mut R,
) -> Vec<usize> {
    let letters = &alignments[rng.random_range(0..alignments.len())];
    let start = rng.random_range(0..letters.len());
    let stop = 1.0 / mean_letters;
    let mut len = 1;
    while len < max_letters && start + len < letters.len() && rng.random::<f64>() >= stop {
        len += 1;
    }
    letters[start..start + len].to_vec()
}
