//! Weak-limit hierarchical Dirichlet process hidden language model.
//!
//! Words are strings of latent letters; letters emit Gaussian frames for a
//! truncated-Poisson number of frames; words follow a bigram language model.
//! One blocked Gibbs iteration samples every utterance's segmentation given
//! the global parameters, then resamples the parameters given the
//! segmentations. [`Mode::FlatHsmm`] collapses words to single letters.

mod params;
mod resample;
mod sampler;
mod segment;
#[cfg(test)]
mod tests;

use rayon::prelude::*;

pub use params::{
    AcousticModel, GaussStats, Gaussian, GlobalParams, HlmHyper, LanguageModel, Mode, NiwPrior, SpellingSource,
    WordModel,
};
pub use resample::{
    draw_spelling, letter_transition_counts, resample_acoustic, resample_hdp_rows,
    resample_language_and_word_models, sample_letter_string, word_transition_counts,
};
pub use sampler::{joint_loglik, log_marginal, sample_word_sequence, Backward, SegmentTable};
pub use segment::{segment_loglik, LetterScores};

pub use crate::segmentation::WordSequence;

use crate::corpus::{Corpus, FeatureMatrix};
use crate::dists;
use crate::error::Result;
use crate::rng::{self, tag};

/// Draws initial parameters from the priors: stick-breaking bases, Dirichlet
/// bigram rows, NIW letter Gaussians, Gamma duration rates and geometric
/// spellings.
pub fn init_params(hyper: &HlmHyper, corpus: &Corpus, seed: u64) -> Result<GlobalParams> {
    hyper.validate()?;
    let mut r = rng::stream(seed, &[tag::INIT]);
    let dim = corpus.feature_dim();
    let prior = hyper.niw_prior(dim);
    let j = hyper.n_letters;
    let v = hyper.n_words;

    let emissions = (0..j).map(|_| prior.sample(&mut r)).collect();
    let rates = (0..j)
        .map(|_| dists::gamma_draw(hyper.dur_shape, hyper.dur_rate, &mut r).max(1e-6))
        .collect();
    let am = AcousticModel::new(emissions, rates, hyper.max_letter_duration);

    let wm_base = dists::dirichlet(&vec![hyper.gamma_wm / j as f64; j], &mut r);
    let wm_rows = (0..=j)
        .map(|_| {
            let a: Vec<f64> = wm_base.iter().map(|b| (hyper.alpha_wm * b).max(1e-300)).collect();
            dists::dirichlet(&a, &mut r)
        })
        .collect();
    let mut wm = WordModel {
        spellings: Vec::new(),
        letter_bigram: wm_rows,
        base: wm_base,
        alpha: hyper.alpha_wm,
        gamma: hyper.gamma_wm,
    };
    wm.spellings = match hyper.mode {
        Mode::FlatHsmm => (0..v).map(|i| vec![i]).collect(),
        Mode::DoubleArticulation => (0..v)
            .map(|_| draw_spelling(&wm, hyper.mean_word_letters, hyper.max_word_letters, &mut r))
            .collect(),
    };

    let lm_base = dists::dirichlet(&vec![hyper.gamma_lm / v as f64; v], &mut r);
    let lm_rows = (0..=v)
        .map(|_| {
            let a: Vec<f64> = lm_base.iter().map(|b| (hyper.alpha_lm * b).max(1e-300)).collect();
            dists::dirichlet(&a, &mut r)
        })
        .collect();
    let lm = LanguageModel {
        bigram: lm_rows,
        base: lm_base,
        alpha: hyper.alpha_lm,
        gamma: hyper.gamma_lm,
    };
    Ok(GlobalParams {
        am,
        wm,
        lm,
        mode: hyper.mode,
    })
}

/// Samples a segmentation for every utterance (in parallel, one keyed stream
/// per utterance).
pub fn sample_all(corpus: &Corpus, params: &GlobalParams, hyper: &HlmHyper, seed: u64) -> Result<Vec<WordSequence>> {
    corpus
        .utterances
        .par_iter()
        .enumerate()
        .map(|(u, utt)| {
            let mut r = rng::stream(seed, &[tag::SEGMENT, u as u64]);
            sample_word_sequence(&utt.id, &utt.frames, params, hyper.max_utterance_len, &mut r)
        })
        .collect()
}

/// Resamples every global parameter given segmentations.
pub fn resample_params(
    corpus: &Corpus,
    seqs: &[WordSequence],
    params: &GlobalParams,
    hyper: &HlmHyper,
    seed: u64,
) -> GlobalParams {
    let mut r = rng::stream(seed, &[tag::RESAMPLE]);
    let frames: Vec<&FeatureMatrix> = corpus.utterances.iter().map(|u| &u.frames).collect();
    let prior = hyper.niw_prior(corpus.feature_dim());
    let am = resample_acoustic(&frames, seqs, &params.am, &prior, hyper.dur_shape, hyper.dur_rate, &mut r);
    let (lm, wm) = resample_language_and_word_models(&frames, seqs, params, &am, hyper, &mut r);
    GlobalParams {
        am,
        wm,
        lm,
        mode: params.mode,
    }
}

/// One blocked Gibbs iteration. `seed` should be unique per (chain,
/// iteration); the result depends on nothing else.
pub fn npb_daa_iteration(
    corpus: &Corpus,
    params: &GlobalParams,
    hyper: &HlmHyper,
    seed: u64,
) -> Result<(GlobalParams, Vec<WordSequence>)> {
    let seqs = sample_all(corpus, params, hyper, seed)?;
    let next = resample_params(corpus, &seqs, params, hyper, seed);
    Ok((next, seqs))
}

/// Σ over utterances of log P(frames, segmentation | 𝒢).
pub fn corpus_joint_loglik(corpus: &Corpus, seqs: &[WordSequence], params: &GlobalParams) -> f64 {
    corpus
        .utterances
        .iter()
        .zip(seqs)
        .map(|(u, s)| joint_loglik(&u.frames, s, params))
        .sum()
}
