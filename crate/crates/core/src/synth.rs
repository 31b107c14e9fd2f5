//! Synthetic double-articulation corpora with full ground truth, and an
//! exhaustive posterior enumerator for tiny segmentation problems.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FeatureMatrix, Modality, ObjectRecord, Utterance};
use crate::dists;
use crate::error::{Error, Result};
use crate::hdp_hlm::GlobalParams;
use crate::rng::{self, tag};
use crate::segmentation::{LetterSpan, Segment, WordSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub spelling: Vec<usize>,
    /// Category this word describes; `None` marks a function word shared by
    /// every category.
    pub category: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_phonemes: usize,
    pub feature_dim: usize,
    /// Scale of the phoneme means, which are drawn from N(0, I) and multiplied
    /// by this factor.
    pub separation: f64,
    /// Per-dimension standard deviation of frames around their phoneme mean.
    pub noise_sd: f64,
    pub mean_duration: f64,
    pub max_duration: usize,
    pub lexicon: Vec<LexiconEntry>,
    pub n_categories: usize,
    /// Probability that a word slot holds a content word of the object's
    /// category rather than a function word.
    pub content_mass: f64,
    pub n_objects: usize,
    pub utterances_per_object: usize,
    pub words_per_utterance: usize,
    pub modality_bins: BTreeMap<Modality, usize>,
    /// Mixing weight of the category-specific profile in each object's
    /// modality distribution (the rest is a profile shared by all categories).
    pub modality_informativeness: f64,
    /// Draws per object histogram.
    pub histogram_draws: usize,
    pub seed: u64,
}

fn content(spelling: &[usize], category: usize) -> LexiconEntry {
    LexiconEntry {
        spelling: spelling.to_vec(),
        category: Some(category),
    }
}

fn function(spelling: &[usize]) -> LexiconEntry {
    LexiconEntry {
        spelling: spelling.to_vec(),
        category: None,
    }
}

impl Default for SynthSpec {
    /// Desk-scale corpus: 6 phonemes, 9 words (two content words per
    /// category, three function words), 3 categories, 12 objects with 3
    /// utterances each.
    fn default() -> Self {
        Self {
            n_phonemes: 6,
            feature_dim: 3,
            separation: 2.0,
            noise_sd: 0.5,
            mean_duration: 5.0,
            max_duration: 12,
            lexicon: vec![
                content(&[0, 1, 2], 0),
                content(&[3, 5], 0),
                content(&[4, 2, 0], 1),
                content(&[1, 5, 3], 1),
                content(&[2, 4], 2),
                content(&[5, 0, 4], 2),
                function(&[3, 0]),
                function(&[5, 1]),
                function(&[1, 4]),
            ],
            n_categories: 3,
            content_mass: 0.6,
            n_objects: 12,
            utterances_per_object: 3,
            words_per_utterance: 3,
            modality_bins: BTreeMap::from([(Modality::Audio, 8), (Modality::Haptic, 8), (Modality::Vision, 8)]),
            modality_informativeness: 0.3,
            histogram_draws: 40,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_phonemes < 1 || self.feature_dim < 1 {
            return bad("need at least one phoneme and one feature dimension".into());
        }
        if !(self.noise_sd > 0.0) || !self.noise_sd.is_finite() {
            return bad(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return bad("separation must be finite and nonnegative".into());
        }
        if !(self.mean_duration > 0.0) || self.max_duration < 1 {
            return bad("durations must be positive".into());
        }
        if self.lexicon.is_empty() {
            return bad("empty lexicon".into());
        }
        for (i, w) in self.lexicon.iter().enumerate() {
            if w.spelling.is_empty() {
                return bad(format!("lexicon entry {i} has an empty spelling"));
            }
            if w.spelling.iter().any(|&p| p >= self.n_phonemes) {
                return bad(format!("lexicon entry {i} uses an unknown phoneme"));
            }
            if w.category.is_some_and(|c| c >= self.n_categories) {
                return bad(format!("lexicon entry {i} names an unknown category"));
            }
        }
        if self.n_categories < 1 || self.n_objects < 1 || self.utterances_per_object < 1 || self.words_per_utterance < 1 {
            return bad("category, object, utterance and word counts must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.content_mass) || !(0.0..=1.0).contains(&self.modality_informativeness) {
            return bad("content_mass and modality_informativeness must lie in [0, 1]".into());
        }
        for k in 0..self.n_categories {
            let mass: f64 = self.word_distribution(k).iter().sum();
            if (mass - 1.0).abs() > 1e-12 {
                return bad(format!("word distribution of category {k} does not sum to 1"));
            }
        }
        if self.modality_bins.values().any(|&b| b < 1) {
            return bad("every modality needs at least one bin".into());
        }
        Ok(())
    }

    /// Distribution over the lexicon for utterances about category `k`.
    pub fn word_distribution(&self, k: usize) -> Vec<f64> {
        let n_content = self.lexicon.iter().filter(|w| w.category == Some(k)).count();
        let n_function = self.lexicon.iter().filter(|w| w.category.is_none()).count();
        let content_share = match (n_content, n_function) {
            (_, 0) => 1.0,
            (0, _) => 0.0,
            _ => self.content_mass,
        };
        self.lexicon
            .iter()
            .map(|w| match w.category {
                Some(c) if c == k => content_share / n_content as f64,
                Some(_) => 0.0,
                None => (1.0 - content_share) / n_function as f64,
            })
            .collect()
    }
}

/// Everything the generator decided, beyond the labels already stored in the
/// corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub phoneme_means: Vec<Vec<f64>>,
    pub lexicon: Vec<LexiconEntry>,
    pub object_categories: Vec<usize>,
    /// Lexicon indices of the words of every utterance.
    pub utterance_words: Vec<Vec<usize>>,
}

impl GroundTruth {
    /// Per-frame flag (corpus order): does the frame belong to a content word?
    pub fn content_frames(&self, corpus: &Corpus) -> Result<Vec<bool>> {
        let (words, _) = corpus.gt_frame_labels()?;
        Ok(words
            .iter()
            .map(|&w| self.lexicon[w as usize].category.is_some())
            .collect())
    }
}

/// Generates a corpus and its ground truth; deterministic in `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<(Corpus, GroundTruth)> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, &[tag::SYNTH]);

    let phoneme_means: Vec<Vec<f64>> = (0..spec.n_phonemes)
        .map(|_| {
            (0..spec.feature_dim)
                .map(|_| spec.separation * r.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    // Category profiles per modality, plus one shared profile.
    let mut profiles: BTreeMap<Modality, (Vec<f64>, Vec<Vec<f64>>)> = BTreeMap::new();
    for (&m, &bins) in &spec.modality_bins {
        let shared = dists::dirichlet(&vec![1.0; bins], &mut r);
        let per_cat = (0..spec.n_categories)
            .map(|_| dists::dirichlet(&vec![1.0; bins], &mut r))
            .collect();
        profiles.insert(m, (shared, per_cat));
    }

    let object_categories: Vec<usize> = (0..spec.n_objects).map(|d| d % spec.n_categories).collect();
    let mut objects = Vec::with_capacity(spec.n_objects);
    for (d, &k) in object_categories.iter().enumerate() {
        let mut histograms = BTreeMap::new();
        for (&m, (shared, per_cat)) in &profiles {
            let mix: Vec<f64> = shared
                .iter()
                .zip(&per_cat[k])
                .map(|(s, c)| (1.0 - spec.modality_informativeness) * s + spec.modality_informativeness * c)
                .collect();
            let mut hist = vec![0.0; mix.len()];
            for _ in 0..spec.histogram_draws.max(1) {
                hist[dists::sample_categorical(&mix, &mut r).unwrap_or(0)] += 1.0;
            }
            histograms.insert(m, hist);
        }
        objects.push(ObjectRecord {
            object_id: format!("obj{d:03}"),
            histograms,
            gt_category: Some(k as i64),
        });
    }

    let durations = Poisson::new(spec.mean_duration).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut utterances = Vec::new();
    let mut utterance_words = Vec::new();
    for (d, &k) in object_categories.iter().enumerate() {
        let word_dist = spec.word_distribution(k);
        for u in 0..spec.utterances_per_object {
            let words: Vec<usize> = (0..spec.words_per_utterance)
                .map(|_| dists::sample_categorical(&word_dist, &mut r).expect("word distribution has mass"))
                .collect();
            let mut rows = Vec::new();
            let mut word_labels = Vec::new();
            let mut letter_labels = Vec::new();
            for &w in &words {
                for &p in &spec.lexicon[w].spelling {
                    let dur = loop {
                        let x = durations.sample(&mut r) as usize;
                        if (1..=spec.max_duration).contains(&x) {
                            break x;
                        }
                    };
                    for _ in 0..dur {
                        rows.push(
                            phoneme_means[p]
                                .iter()
                                .map(|mu| mu + spec.noise_sd * r.sample::<f64, _>(StandardNormal))
                                .collect::<Vec<f64>>(),
                        );
                        word_labels.push(w as i64);
                        letter_labels.push(p as i64);
                    }
                }
            }
            utterances.push(Utterance {
                id: format!("obj{d:03}_u{u}"),
                object_id: format!("obj{d:03}"),
                frames: FeatureMatrix::from_rows(&rows)?,
                gt_word_labels: Some(word_labels),
                gt_letter_labels: Some(letter_labels),
            });
            utterance_words.push(words);
        }
    }

    let corpus = Corpus::new(utterances, objects)?;
    Ok((
        corpus,
        GroundTruth {
            phoneme_means,
            lexicon: spec.lexicon.clone(),
            object_categories,
            utterance_words,
        },
    ))
}

pub const ENUM_MAX_FRAMES: usize = 10;
pub const ENUM_MAX_WORDS: usize = 3;
pub const ENUM_MAX_LETTERS: usize = 3;

/// Exact posterior over (segmentation, alignment) for a tiny utterance,
/// by listing every word tiling and letter-duration composition. Returns
/// configurations with their normalized probabilities.
pub fn enumerate_segmentation_posterior(
    frames: &FeatureMatrix,
    params: &GlobalParams,
) -> Result<Vec<(WordSequence, f64)>> {
    let t_len = frames.n_frames();
    if t_len > ENUM_MAX_FRAMES {
        return Err(Error::EnumerationCap(format!("{t_len} frames > {ENUM_MAX_FRAMES}")));
    }
    if params.n_words() > ENUM_MAX_WORDS {
        return Err(Error::EnumerationCap(format!("{} words > {ENUM_MAX_WORDS}", params.n_words())));
    }
    if params.wm.spellings.iter().any(|s| s.len() > ENUM_MAX_LETTERS) {
        return Err(Error::EnumerationCap(format!("spelling longer than {ENUM_MAX_LETTERS} letters")));
    }

    // Direct per-frame emission log-densities, no prefix sums or DP.
    let emit: Vec<Vec<f64>> = params
        .am
        .emissions
        .iter()
        .map(|g| (0..t_len).map(|t| g.logpdf(frames.row(t))).collect())
        .collect();
    let dmax = params.am.max_letter_duration;

    let mut out: Vec<(WordSequence, f64)> = Vec::new();
    let mut stack: Vec<Segment> = Vec::new();
    enumerate_from(0, params.lm.start_row(), 0.0, t_len, dmax, params, &emit, &mut stack, &mut out);

    let logs: Vec<f64> = out.iter().map(|(_, l)| *l).collect();
    let z = dists::logsumexp(&logs);
    for (_, l) in out.iter_mut() {
        *l = (*l - z).exp();
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn enumerate_from(
    t: usize,
    prev: usize,
    acc: f64,
    t_len: usize,
    dmax: usize,
    params: &GlobalParams,
    emit: &[Vec<f64>],
    stack: &mut Vec<Segment>,
    out: &mut Vec<(WordSequence, f64)>,
) {
    if t == t_len {
        out.push((WordSequence::new(stack.clone()), acc));
        return;
    }
    for (word, spelling) in params.wm.spellings.iter().enumerate() {
        let trans = params.lm.bigram[prev][word].ln();
        if trans == f64::NEG_INFINITY {
            continue;
        }
        for letters in compositions(spelling, t_len - t, dmax) {
            let mut ll = trans;
            let mut s = t;
            for l in &letters {
                ll += params.am.duration_log_pmf(l.letter, l.duration);
                ll += emit[l.letter][s..s + l.duration].iter().sum::<f64>();
                s += l.duration;
            }
            stack.push(Segment {
                word,
                start: t,
                end: s,
                letters,
            });
            enumerate_from(s, word, acc + ll, t_len, dmax, params, emit, stack, out);
            stack.pop();
        }
    }
}

/// Every assignment of durations in `1..=dmax` to the letters of `spelling`
/// with total at most `budget`.
fn compositions(spelling: &[usize], budget: usize, dmax: usize) -> Vec<Vec<LetterSpan>> {
    if spelling.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for d in 1..=dmax.min(budget) {
        for mut rest in compositions(&spelling[1..], budget - d, dmax) {
            rest.insert(
                0,
                LetterSpan {
                    letter: spelling[0],
                    duration: d,
                },
            );
            out.push(rest);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_passes_invariants() {
        let spec = SynthSpec::default();
        let (corpus, gt) = generate(&spec).unwrap();
        assert_eq!(corpus.objects.len(), 12);
        assert_eq!(corpus.utterances.len(), 36);
        assert_eq!(gt.utterance_words.len(), 36);
        for (u, words) in corpus.utterances.iter().zip(&gt.utterance_words) {
            let labels = u.gt_word_labels.as_ref().unwrap();
            assert_eq!(labels.len(), u.n_frames());
            // word labels change only at word boundaries, in utterance order
            let mut runs: Vec<i64> = labels.clone();
            runs.dedup();
            let mut expect: Vec<i64> = words.iter().map(|&w| w as i64).collect();
            expect.dedup();
            assert_eq!(runs, expect);
        }
        for k in 0..spec.n_categories {
            assert!((spec.word_distribution(k).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec::default();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SynthSpec { seed: 1, ..SynthSpec::default() };
        assert_ne!(generate(&spec).unwrap().0, generate(&other).unwrap().0);
    }

    #[test]
    fn one_word_spec_has_uniform_label_structure() {
        let spec = SynthSpec {
            n_phonemes: 1,
            lexicon: vec![function(&[0])],
            n_categories: 1,
            content_mass: 0.0,
            words_per_utterance: 1,
            ..SynthSpec::default()
        };
        let (corpus, _) = generate(&spec).unwrap();
        for u in &corpus.utterances {
            assert!(u.gt_word_labels.as_ref().unwrap().iter().all(|&w| w == 0));
            assert!(u.gt_letter_labels.as_ref().unwrap().iter().all(|&l| l == 0));
        }
    }

    fn tiny_params(n_words: usize, dmax: usize) -> GlobalParams {
        use crate::hdp_hlm::{AcousticModel, Gaussian};
        use nalgebra::DMatrix;
        let am = AcousticModel::new(
            (0..n_words)
                .map(|j| Gaussian::new(vec![j as f64], DMatrix::from_element(1, 1, 0.5)))
                .collect(),
            vec![2.0; n_words],
            dmax,
        );
        let spellings = (0..n_words).map(|j| vec![j]).collect();
        GlobalParams::fixed(am, spellings, vec![vec![1.0 / n_words as f64; n_words]; n_words + 1])
    }

    #[test]
    fn enumeration_counts_every_tiling_and_word_choice() {
        let frames = FeatureMatrix::from_flat(4, 1, vec![0.1, 0.9, 1.2, -0.2]).unwrap();
        let out = enumerate_segmentation_posterior(&frames, &tiny_params(2, 4)).unwrap();
        // tilings with s segments: C(3, s-1), each with 2^s word choices
        let expected: usize = (1..=4).map(|s| [1, 3, 3, 1][s - 1] * (1 << s)).sum();
        assert_eq!(expected, 54);
        assert_eq!(out.len(), expected);
        assert!((out.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        for (ws, _) in &out {
            assert_eq!(ws.n_frames(), 4);
        }
    }

    #[test]
    fn single_word_enumeration_has_unit_mass() {
        let frames = FeatureMatrix::from_flat(5, 1, vec![0.0, 0.1, -0.1, 0.2, 0.0]).unwrap();
        let out = enumerate_segmentation_posterior(&frames, &tiny_params(1, 3)).unwrap();
        assert!((out.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|(ws, _)| ws.segments.iter().all(|s| s.word == 0)));
        let frames = FeatureMatrix::from_flat(11, 1, vec![0.0; 11]).unwrap();
        assert!(enumerate_segmentation_posterior(&frames, &tiny_params(1, 3)).is_err());
    }

    /// Per-class diagonal Gaussians fitted on the labelled frames, scored on
    /// the same frames.
    fn qda_accuracy(corpus: &Corpus) -> f64 {
        let (_, letters) = corpus.gt_frame_labels().unwrap();
        let rows: Vec<&[f64]> = corpus.utterances.iter().flat_map(|u| u.frames.rows()).collect();
        let dim = corpus.feature_dim();
        let classes = letters.iter().max().unwrap() + 1;
        let mut stats = vec![(0.0, vec![0.0; dim], vec![0.0; dim]); classes as usize];
        for (x, &c) in rows.iter().zip(&letters) {
            let s = &mut stats[c as usize];
            s.0 += 1.0;
            for i in 0..dim {
                s.1[i] += x[i];
                s.2[i] += x[i] * x[i];
            }
        }
        let fitted: Vec<(Vec<f64>, Vec<f64>)> = stats
            .iter()
            .map(|(n, sum, sq)| {
                let mean: Vec<f64> = sum.iter().map(|v| v / n).collect();
                let var = sq.iter().zip(&mean).map(|(q, m)| q / n - m * m).collect();
                (mean, var)
            })
            .collect();
        let hits = rows
            .iter()
            .zip(&letters)
            .filter(|(x, &c)| {
                let score = |(m, v): &(Vec<f64>, Vec<f64>)| -> f64 {
                    (0..dim).map(|i| -0.5 * v[i].ln() - (x[i] - m[i]).powi(2) / (2.0 * v[i])).sum()
                };
                let best = (0..fitted.len())
                    .max_by(|&a, &b| score(&fitted[a]).total_cmp(&score(&fitted[b])))
                    .unwrap();
                best as i64 == c
            })
            .count();
        hits as f64 / letters.len() as f64
    }

    #[test]
    fn phonemes_become_separable_as_separation_grows() {
        let acc = |separation| {
            let (corpus, _) = generate(&SynthSpec { separation, ..SynthSpec::default() }).unwrap();
            qda_accuracy(&corpus)
        };
        let (low, high) = (acc(0.5), acc(100.0));
        assert!(high > low);
        assert_eq!(high, 1.0);
    }

    #[test]
    fn infeasible_specs_rejected() {
        assert!(generate(&SynthSpec { noise_sd: 0.0, ..SynthSpec::default() }).is_err());
        let mut spec = SynthSpec::default();
        spec.lexicon[0].spelling.clear();
        assert!(generate(&spec).is_err());
    }
}
