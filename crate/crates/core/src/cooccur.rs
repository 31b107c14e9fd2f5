//! The co-occurrence loop: sampling importance resampling over Q word-model
//! candidates, weighted by how well each candidate's words are explained by
//! the object categories they co-occur with.
//!
//! Outer iteration `t` (1-based) runs, per candidate: one blocked Gibbs step
//! of the word model, a fresh MLDA on the bag of words plus the non-word
//! histograms, per-token category assignment, and a weight. The normalized
//! weights pick the parents of the next iteration's candidates.

use std::collections::BTreeMap;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Modality};
use crate::dists;
use crate::error::{Error, Result};
use crate::hdp_hlm::{self, GlobalParams, HlmHyper};
use crate::mlda::{self, CategoryModel, MldaConfig, ModalityInput};
use crate::rng::{self, tag};
use crate::segmentation::WordSequence;

pub const WORD: &str = "word";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    #[default]
    Fixed,
    Increase,
    Decrease,
}

/// Word-modality weight as a function of the outer iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub mode: ScheduleMode,
    /// Used by [`ScheduleMode::Fixed`] only.
    pub fixed_value: f64,
}

impl WeightSchedule {
    pub fn fixed(value: f64) -> Self {
        Self {
            mode: ScheduleMode::Fixed,
            fixed_value: value,
        }
    }

    pub fn at(&self, t: usize) -> f64 {
        word_schedule(t, self)
    }
}

impl Default for WeightSchedule {
    fn default() -> Self {
        Self::fixed(200.0)
    }
}

/// Increase: `max(0, min(30 + 10(t - 10), 200))`.
/// Decrease: `min(max(20, 10(30 - t)), 200)`.
pub fn word_schedule(t: usize, schedule: &WeightSchedule) -> f64 {
    let t = t as f64;
    match schedule.mode {
        ScheduleMode::Fixed => schedule.fixed_value,
        ScheduleMode::Increase => (30.0 + 10.0 * (t - 10.0)).clamp(0.0, 200.0),
        ScheduleMode::Decrease => (10.0 * (30.0 - t)).clamp(20.0, 200.0),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SirMode {
    /// Unigram-rescaling likelihood ratio.
    #[default]
    Ur,
    /// Plug-in mutual information between words and assigned categories.
    Mi,
}

/// Denominator of the per-token rescaling ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum UrDenominator {
    /// `Σ_k θ_{k,o}`.
    #[default]
    Unweighted,
    /// `Σ_k θ_{k,o} π_{d,k}`.
    PiWeighted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub candidates: usize,
    pub outer_iterations: usize,
    pub mlda: MldaConfig,
    /// Shared emission concentration; per-modality overrides by name.
    pub beta: f64,
    pub beta_overrides: BTreeMap<String, f64>,
    /// Non-word modality weights; a weight of 0 drops the modality.
    pub modality_weights: BTreeMap<Modality, f64>,
    pub word_weight: WeightSchedule,
    pub sir_mode: SirMode,
    pub ur_denominator: UrDenominator,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            candidates: 10,
            outer_iterations: 100,
            mlda: MldaConfig::default(),
            beta: 0.1,
            beta_overrides: BTreeMap::new(),
            modality_weights: BTreeMap::from([
                (Modality::Audio, 50.0),
                (Modality::Haptic, 100.0),
                (Modality::Vision, 100.0),
            ]),
            word_weight: WeightSchedule::default(),
            sir_mode: SirMode::Ur,
            ur_denominator: UrDenominator::Unweighted,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates < 1 || self.outer_iterations < 1 {
            return Err(Error::InvalidArgument(
                "candidate count and outer iterations must be at least 1".into(),
            ));
        }
        if self.mlda.iterations < 1 || self.mlda.categories < 1 {
            return Err(Error::InvalidArgument("MLDA needs at least one sweep and one category".into()));
        }
        let negative = self.modality_weights.values().any(|w| !(*w >= 0.0));
        if negative || (self.word_weight.mode == ScheduleMode::Fixed && !(self.word_weight.fixed_value >= 0.0)) {
            return Err(Error::InvalidArgument("modality weights must be nonnegative".into()));
        }
        Ok(())
    }

    fn beta_for(&self, name: &str) -> f64 {
        self.beta_overrides.get(name).copied().unwrap_or(self.beta)
    }
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub index: usize,
    /// Candidate of the previous iteration this one was resampled from.
    pub parent: usize,
    pub params: GlobalParams,
    pub sequences: Vec<WordSequence>,
    pub category_model: CategoryModel,
    /// UR: log weight. MI: the mutual information itself.
    pub weight_raw: f64,
    pub weight_norm: f64,
}

/// Raw word-token counts per object, pooled over the object's utterances.
pub fn bag_of_words(seqs: &[WordSequence], corpus: &Corpus, n_words: usize) -> Vec<Vec<u32>> {
    let mut counts = vec![vec![0u32; n_words]; corpus.objects.len()];
    for (seq, d) in seqs.iter().zip(corpus.utterance_objects()) {
        for w in seq.words() {
            counts[d][w] += 1;
        }
    }
    counts
}

/// Scales raw per-object histograms to `weight` tokens each; `None` when
/// the weight excludes the modality.
pub fn weighted_modality(name: &str, hists: &[Vec<f64>], weight: f64, beta: f64) -> Result<Option<ModalityInput>> {
    if weight == 0.0 {
        return Ok(None);
    }
    let counts = hists
        .iter()
        .map(|h| mlda::scale_histogram(h, weight))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(ModalityInput {
        name: name.to_string(),
        counts,
        beta,
    }))
}

/// MLDA inputs for one candidate: the word modality (if weighted) first,
/// then the non-word modalities in a fixed order.
pub fn mlda_inputs(corpus: &Corpus, bow: &[Vec<u32>], word_weight: f64, config: &RunConfig) -> Result<Vec<ModalityInput>> {
    let mut inputs = Vec::new();
    let word_hists: Vec<Vec<f64>> = bow.iter().map(|c| c.iter().map(|&x| x as f64).collect()).collect();
    inputs.extend(weighted_modality(WORD, &word_hists, word_weight, config.beta_for(WORD))?);
    for (&m, &w) in &config.modality_weights {
        let hists: Vec<Vec<f64>> = corpus
            .objects
            .iter()
            .map(|o| {
                o.histograms.get(&m).cloned().ok_or_else(|| Error::MissingLabels(format!(
                    "object {} has no {m} histogram",
                    o.object_id
                )))
            })
            .collect::<Result<_>>()?;
        inputs.extend(weighted_modality(m.name(), &hists, w, config.beta_for(m.name()))?);
    }
    Ok(inputs)
}

/// One word token with its object and sampled category.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WordAssignment {
    pub object: usize,
    pub word: usize,
    pub category: usize,
}

/// `P(k) ∝ θ^w_{k,o} π_{d,k}` for one token.
pub fn word_category_distribution(model: &CategoryModel, word_modality: usize, object: usize, word: usize) -> Vec<f64> {
    let theta = &model.theta[word_modality];
    let mut p: Vec<f64> = (0..model.n_categories())
        .map(|k| theta[k][word] * model.pi[object][k])
        .collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    p
}

/// Samples a category for every word token of every utterance.
pub fn assign_word_categories<R: Rng + ?Sized>(
    seqs: &[WordSequence],
    corpus: &Corpus,
    model: &CategoryModel,
    word_modality: usize,
    rng: &mut R,
) -> Vec<WordAssignment> {
    let mut out = Vec::new();
    for (seq, d) in seqs.iter().zip(corpus.utterance_objects()) {
        for word in seq.words() {
            let p = word_category_distribution(model, word_modality, d, word);
            let category = dists::sample_categorical(&p, rng).expect("proper distribution");
            out.push(WordAssignment {
                object: d,
                word,
                category,
            });
        }
    }
    out
}

/// `Σ_tokens [log θ_{k̂,o} − log denominator]`.
pub fn candidate_weight_ur(
    model: &CategoryModel,
    word_modality: usize,
    assignments: &[WordAssignment],
    denominator: UrDenominator,
) -> f64 {
    let theta = &model.theta[word_modality];
    assignments
        .iter()
        .map(|a| {
            let den: f64 = match denominator {
                UrDenominator::Unweighted => (0..theta.len()).map(|k| theta[k][a.word]).sum(),
                UrDenominator::PiWeighted => (0..theta.len()).map(|k| theta[k][a.word] * model.pi[a.object][k]).sum(),
            };
            theta[a.category][a.word].ln() - den.ln()
        })
        .sum()
}

/// Plug-in mutual information (nats) between word identity and category.
pub fn candidate_weight_mi(assignments: &[WordAssignment]) -> f64 {
    if assignments.len() < 2 {
        return 0.0;
    }
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut words: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cats: BTreeMap<usize, f64> = BTreeMap::new();
    for a in assignments {
        *joint.entry((a.word, a.category)).or_default() += 1.0;
        *words.entry(a.word).or_default() += 1.0;
        *cats.entry(a.category).or_default() += 1.0;
    }
    let n = assignments.len() as f64;
    let mi: f64 = joint
        .iter()
        .map(|(&(w, k), &c)| c / n * (c * n / (words[&w] * cats[&k])).ln())
        .sum();
    mi.max(0.0)
}

/// Normalizes raw weights (log weights for UR, plain weights for MI).
/// All-zero MI weights fall back to uniform with a warning.
pub fn normalize_weights(raw: &[f64], mode: SirMode) -> Vec<f64> {
    let q = raw.len();
    let w: Vec<f64> = match mode {
        SirMode::Ur => {
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY || max.is_nan() {
                vec![0.0; q]
            } else {
                raw.iter().map(|x| (x - max).exp()).collect()
            }
        }
        SirMode::Mi => raw.iter().map(|x| x.max(0.0)).collect(),
    };
    let z: f64 = w.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        warn!("all candidate weights are zero; resampling uniformly");
        return vec![1.0 / q as f64; q];
    }
    w.iter().map(|x| x / z).collect()
}

/// `Q` i.i.d. multinomial draws of candidate indices.
pub fn resample_indices<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    (0..weights.len())
        .map(|_| dists::sample_categorical(weights, rng).expect("normalized weights"))
        .collect()
}

/// Normalizes and draws the `Q` parent indices of the next generation.
pub fn normalize_and_resample<R: Rng + ?Sized>(raw: &[f64], mode: SirMode, rng: &mut R) -> (Vec<f64>, Vec<usize>) {
    let w = normalize_weights(raw, mode);
    let idx = resample_indices(&w, rng);
    (w, idx)
}

/// Step V: largest normalized weight, lowest index on ties.
pub fn best_candidate(weights: &[f64]) -> usize {
    let mut best = 0;
    for (q, &w) in weights.iter().enumerate() {
        if w > weights[best] {
            best = q;
        }
    }
    best
}

/// Snapshot handed to the observer after every outer iteration.
pub struct IterationView<'a> {
    /// 1-based outer iteration.
    pub t: usize,
    pub word_weight: f64,
    pub candidates: &'a [Candidate],
    pub best: usize,
    /// How many copies of each candidate the next generation holds.
    pub resample_counts: &'a [usize],
}

pub struct RunResult {
    pub best_per_iteration: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    /// The adopted candidate of the final iteration.
    pub final_candidate: Candidate,
}

/// Runs the full loop. `observer` sees every iteration (for traces and
/// checkpoints) and may fail the run.
pub fn run_cooccurrence_daa(
    corpus: &Corpus,
    hyper: &HlmHyper,
    config: &RunConfig,
    mut observer: impl FnMut(&IterationView<'_>) -> Result<()>,
) -> Result<RunResult> {
    config.validate()?;
    hyper.validate()?;
    let seed = config.seed;
    let q_count = config.candidates;

    // Independent initial candidates; generation 1 copies them unchanged.
    let mut current: Vec<GlobalParams> = (0..q_count)
        .into_par_iter()
        .map(|q| hdp_hlm::init_params(hyper, corpus, rng::derive(seed, &[tag::INIT, q as u64])))
        .collect::<Result<_>>()?;
    let mut parents: Vec<usize> = (0..q_count).collect();

    let mut best_per_iteration = Vec::with_capacity(config.outer_iterations);
    let mut weight_trace = Vec::with_capacity(config.outer_iterations);
    let mut last: Option<Candidate> = None;

    for t in 1..=config.outer_iterations {
        let word_weight = word_schedule(t, &config.word_weight);
        let mut candidates: Vec<Candidate> = current
            .par_iter()
            .zip(parents.par_iter())
            .enumerate()
            .map(|(q, (params, &parent))| {
                step_candidate(corpus, hyper, config, params, q, parent, t, word_weight)
            })
            .collect::<Result<_>>()?;

        let raw: Vec<f64> = candidates.iter().map(|c| c.weight_raw).collect();
        let mut r = rng::stream(seed, &[tag::SIR, t as u64]);
        let (norm, next_parents) = if word_weight == 0.0 {
            // Categorization does not see the words: every candidate is
            // equally plausible.
            let w = vec![1.0 / q_count as f64; q_count];
            let idx = resample_indices(&w, &mut r);
            (w, idx)
        } else {
            normalize_and_resample(&raw, config.sir_mode, &mut r)
        };
        for (c, w) in candidates.iter_mut().zip(&norm) {
            c.weight_norm = *w;
        }
        let best = best_candidate(&norm);
        let mut counts = vec![0usize; q_count];
        for &p in &next_parents {
            counts[p] += 1;
        }
        observer(&IterationView {
            t,
            word_weight,
            candidates: &candidates,
            best,
            resample_counts: &counts,
        })?;

        best_per_iteration.push(best);
        weight_trace.push(norm);
        current = next_parents.iter().map(|&p| candidates[p].params.clone()).collect();
        parents = next_parents;
        last = Some(candidates.swap_remove(best));
    }

    Ok(RunResult {
        best_per_iteration,
        weights: weight_trace,
        final_candidate: last.expect("at least one iteration"),
    })
}

#[allow(clippy::too_many_arguments)]
fn step_candidate(
    corpus: &Corpus,
    hyper: &HlmHyper,
    config: &RunConfig,
    params: &GlobalParams,
    q: usize,
    parent: usize,
    t: usize,
    word_weight: f64,
) -> Result<Candidate> {
    let seed = config.seed;
    let key = [t as u64, q as u64];
    let (next, seqs) = hdp_hlm::npb_daa_iteration(corpus, params, hyper, rng::derive(seed, &[tag::SEGMENT, key[0], key[1]]))?;
    let bow = bag_of_words(&seqs, corpus, next.n_words());
    let inputs = mlda_inputs(corpus, &bow, word_weight, config)?;
    let model = mlda::run_mlda(&inputs, &config.mlda, rng::derive(seed, &[tag::MLDA, key[0], key[1]]))?;
    let weight_raw = match model.modality(WORD) {
        Some(wm) => {
            let mut r = rng::stream(seed, &[tag::ASSIGN, key[0], key[1]]);
            let assignments = assign_word_categories(&seqs, corpus, &model, wm, &mut r);
            match config.sir_mode {
                SirMode::Ur => candidate_weight_ur(&model, wm, &assignments, config.ur_denominator),
                SirMode::Mi => candidate_weight_mi(&assignments),
            }
        }
        None => 0.0,
    };
    Ok(Candidate {
        index: q,
        parent,
        params: next,
        sequences: seqs,
        category_model: model,
        weight_raw,
        weight_norm: 0.0,
    })
}
