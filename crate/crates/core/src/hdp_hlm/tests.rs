use std::collections::HashMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{Discrete, Poisson};

use super::*;
use crate::rng;
use super::resample::alignment_substring;
use crate::segmentation::LetterSpan;

fn gauss_1d(mean: f64, var: f64) -> Gaussian {
    Gaussian::new(vec![mean], DMatrix::from_element(1, 1, var))
}

fn ln_normal_1d(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

fn ln_trunc_poisson(d: usize, rate: f64, dmax: usize) -> f64 {
    let p = Poisson::new(rate).unwrap();
    let z: f64 = (1..=dmax as u64).map(|k| p.pmf(k)).sum();
    (p.pmf(d as u64) / z).ln()
}

fn frames_1d(xs: &[f64]) -> FeatureMatrix {
    FeatureMatrix::from_flat(xs.len(), 1, xs.to_vec()).unwrap()
}

/// Independent oracle: explicit sum over every composition of the segment.
fn brute_segment(xs: &[f64], spelling: &[usize], means: &[f64], vars: &[f64], rates: &[f64], dmax: usize) -> f64 {
    fn rec(
        xs: &[f64],
        spelling: &[usize],
        means: &[f64],
        vars: &[f64],
        rates: &[f64],
        dmax: usize,
        acc: f64,
        out: &mut Vec<f64>,
    ) {
        if spelling.is_empty() {
            if xs.is_empty() {
                out.push(acc);
            }
            return;
        }
        let j = spelling[0];
        for d in 1..=dmax.min(xs.len()) {
            let mut ll = ln_trunc_poisson(d, rates[j], dmax);
            for &x in &xs[..d] {
                ll += ln_normal_1d(x, means[j], vars[j]);
            }
            rec(&xs[d..], &spelling[1..], means, vars, rates, dmax, acc + ll, out);
        }
    }
    let mut terms = Vec::new();
    rec(xs, spelling, means, vars, rates, dmax, 0.0, &mut terms);
    if terms.is_empty() {
        return f64::NEG_INFINITY;
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn params_1d(means: &[f64], vars: &[f64], rates: &[f64], dmax: usize, spellings: Vec<Vec<usize>>) -> GlobalParams {
    let am = AcousticModel::new(
        means.iter().zip(vars).map(|(&m, &v)| gauss_1d(m, v)).collect(),
        rates.to_vec(),
        dmax,
    );
    let v = spellings.len();
    GlobalParams::fixed(am, spellings, vec![vec![1.0 / v as f64; v]; v + 1])
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn single_letter_segment_is_one_composition() {
    let xs = [0.3, -0.1, 0.7, 0.2];
    let p = params_1d(&[0.1], &[0.5], &[3.0], 6, vec![vec![0]]);
    let direct = ln_trunc_poisson(4, 3.0, 6) + xs.iter().map(|&x| ln_normal_1d(x, 0.1, 0.5)).sum::<f64>();
    assert!(close(segment_loglik(0, &frames_1d(&xs), &p), direct, 1e-12));
}

#[test]
fn two_letters_two_frames_is_the_product() {
    let xs = [0.3, -1.2];
    let p = params_1d(&[0.0, -1.0], &[1.0, 0.25], &[2.0, 4.0], 5, vec![vec![0, 1]]);
    let direct = ln_trunc_poisson(1, 2.0, 5)
        + ln_normal_1d(0.3, 0.0, 1.0)
        + ln_trunc_poisson(1, 4.0, 5)
        + ln_normal_1d(-1.2, -1.0, 0.25);
    assert!(close(segment_loglik(0, &frames_1d(&xs), &p), direct, 1e-12));
}

#[test]
fn two_letters_five_frames_sums_four_compositions() {
    let xs = [0.1, 0.4, -0.8, -1.1, -0.9];
    let (means, vars, rates) = ([0.2, -1.0], [0.3, 0.4], [2.5, 3.5]);
    let p = params_1d(&means, &vars, &rates, 8, vec![vec![0, 1]]);
    let mut terms = Vec::new();
    for d1 in 1..=4 {
        let mut t = ln_trunc_poisson(d1, rates[0], 8) + ln_trunc_poisson(5 - d1, rates[1], 8);
        t += xs[..d1].iter().map(|&x| ln_normal_1d(x, means[0], vars[0])).sum::<f64>();
        t += xs[d1..].iter().map(|&x| ln_normal_1d(x, means[1], vars[1])).sum::<f64>();
        terms.push(t);
    }
    let expected = crate::dists::logsumexp(&terms);
    assert!(close(segment_loglik(0, &frames_1d(&xs), &p), expected, 1e-10));
}

#[test]
fn segment_shorter_than_spelling_is_impossible() {
    let p = params_1d(&[0.0, 1.0], &[1.0, 1.0], &[2.0, 2.0], 4, vec![vec![0, 1, 0]]);
    assert_eq!(segment_loglik(0, &frames_1d(&[0.0, 1.0]), &p), f64::NEG_INFINITY);
    assert_eq!(segment_loglik(0, &frames_1d(&[0.0; 13]), &p), f64::NEG_INFINITY);
}

proptest! {
    #[test]
    fn segment_loglik_matches_composition_sum(
        spelling in proptest::collection::vec(0usize..3, 1..=3),
        xs in proptest::collection::vec(-3.0f64..3.0, 1..=8),
        means in proptest::collection::vec(-2.0f64..2.0, 3),
        vars in proptest::collection::vec(0.1f64..2.0, 3),
        rates in proptest::collection::vec(0.5f64..8.0, 3),
        dmax in 1usize..=8,
    ) {
        let p = params_1d(&means, &vars, &rates, dmax, vec![spelling.clone()]);
        let got = segment_loglik(0, &frames_1d(&xs), &p);
        let want = brute_segment(&xs, &spelling, &means, &vars, &rates, dmax);
        if want == f64::NEG_INFINITY {
            prop_assert_eq!(got, f64::NEG_INFINITY);
        } else {
            prop_assert!(close(got, want, 1e-10), "{got} vs {want}");
        }
    }
}

/// Key identifying a full configuration (words, spans, letter durations).
fn config_key(seq: &WordSequence) -> Vec<(usize, usize, Vec<(usize, usize)>)> {
    seq.segments
        .iter()
        .map(|s| (s.word, s.start, s.letters.iter().map(|l| (l.letter, l.duration)).collect()))
        .collect()
}

fn tiny_instance() -> (FeatureMatrix, GlobalParams) {
    let xs = [-1.1, -0.8, -1.3, 0.9, 1.2, 1.0, -0.9, 1.1];
    let p = params_1d(
        &[-1.0, 1.0],
        &[0.3, 0.3],
        &[2.0, 2.0],
        4,
        vec![vec![0, 1], vec![1]],
    );
    (frames_1d(&xs), p)
}

#[test]
fn sampler_matches_enumerated_posterior() {
    let (frames, p) = tiny_instance();
    let exact = crate::synth::enumerate_segmentation_posterior(&frames, &p).unwrap();
    let total: f64 = exact.iter().map(|(_, q)| q).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let mut r = rng::stream(7, &[]);
    let n = 10_000;
    let mut counts: HashMap<_, usize> = HashMap::new();
    for _ in 0..n {
        let s = sample_word_sequence("tiny", &frames, &p, 100, &mut r).unwrap();
        s.check_tiling(8).unwrap();
        *counts.entry(config_key(&s)).or_default() += 1;
    }
    let mut tv = 0.0;
    for (seq, q) in &exact {
        let c = counts.remove(&config_key(seq)).unwrap_or(0);
        tv += (c as f64 / n as f64 - q).abs();
    }
    // anything left was sampled but has no enumerated mass
    tv += counts.values().map(|&c| c as f64 / n as f64).sum::<f64>();
    tv /= 2.0;
    assert!(tv <= 0.05, "total variation {tv}");
}

#[test]
fn log_marginal_matches_enumeration_normalizer() {
    let (frames, p) = tiny_instance();
    // Reconstruct the unnormalized joint of each enumerated configuration
    // and compare log Σ with the backward-filter marginal.
    let exact = crate::synth::enumerate_segmentation_posterior(&frames, &p).unwrap();
    let logs: Vec<f64> = exact.iter().map(|(s, _)| joint_loglik(&frames, s, &p)).collect();
    let z = crate::dists::logsumexp(&logs);
    assert!(close(log_marginal(&frames, &p), z, 1e-10));
}

#[test]
fn forced_duration_gives_single_segment() {
    let t = 6;
    let p = params_1d(&[0.0], &[1.0], &[1e4], t, vec![vec![0]]);
    let frames = frames_1d(&[0.1, -0.2, 0.3, 0.0, 0.5, -0.4]);
    let mut r = rng::stream(3, &[]);
    for _ in 0..200 {
        let s = sample_word_sequence("u", &frames, &p, 100, &mut r).unwrap();
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.segments[0].letters, vec![LetterSpan { letter: 0, duration: t }]);
    }
}

#[test]
fn too_long_utterance_is_an_error() {
    let p = params_1d(&[0.0], &[1.0], &[2.0], 4, vec![vec![0]]);
    let mut r = rng::stream(0, &[]);
    let err = sample_word_sequence("long", &frames_1d(&[0.0; 10]), &p, 5, &mut r);
    assert!(matches!(err, Err(crate::Error::UtteranceTooLong { .. })));
}

#[test]
fn no_underflow_on_long_high_dim_utterances() {
    let f = 32;
    let t = 1000;
    let mut r = rng::stream(11, &[]);
    let data: Vec<f64> = (0..t * f).map(|_| r.random::<f64>() * 6.0 - 3.0).collect();
    let frames = FeatureMatrix::from_flat(t, f, data).unwrap();
    let emissions = (0..4)
        .map(|j| Gaussian::new(vec![j as f64 - 1.5; f], DMatrix::identity(f, f)))
        .collect();
    let am = AcousticModel::new(emissions, vec![10.0; 4], 40);
    let p = GlobalParams::fixed(am, vec![vec![0, 1], vec![2], vec![3, 1, 0]], vec![vec![1.0 / 3.0; 3]; 4]);
    let lm = log_marginal(&frames, &p);
    assert!(lm.is_finite(), "log marginal {lm}");
    let s = sample_word_sequence("long", &frames, &p, 2000, &mut r).unwrap();
    s.check_tiling(t).unwrap();
    assert!(joint_loglik(&frames, &s, &p).is_finite());
}

fn niw(kappa: f64) -> NiwPrior {
    NiwPrior {
        mean: vec![0.5, -0.5],
        kappa,
        dof: 7.0,
        scale: DMatrix::identity(2, 2),
    }
}

#[test]
fn niw_draws_concentrate_at_prior_mean_for_large_kappa() {
    let prior = niw(1e8);
    let mut r = rng::stream(1, &[]);
    for _ in 0..10_000 {
        let g = prior.sample(&mut r);
        assert!((g.mean()[0] - 0.5).abs() < 1e-2 && (g.mean()[1] + 0.5).abs() < 1e-2);
    }
}

#[test]
fn niw_posterior_mean_is_the_conjugate_closed_form() {
    let prior = NiwPrior {
        mean: vec![0.0],
        kappa: 0.01,
        dof: 6.0,
        scale: DMatrix::identity(1, 1),
    };
    let mut stats = GaussStats::new(1);
    let (n, c) = (20, 1.5);
    for _ in 0..n {
        stats.push(&[c]);
    }
    let post = prior.posterior(&stats);
    let want = n as f64 * c / (0.01 + n as f64);
    assert!((post.mean[0] - want).abs() < 1e-12);
    assert_eq!(post.kappa, 20.01);
    assert_eq!(post.dof, 26.0);
    // Monte-Carlo mean of μ within 3σ. Var(μ) = E[Σ]/κ = scale/((ν-2)κ).
    let mut r = rng::stream(2, &[]);
    let draws = 10_000;
    let s: f64 = (0..draws).map(|_| post.sample(&mut r).mean()[0]).sum();
    let sd = (post.scale[(0, 0)] / ((post.dof - 2.0) * post.kappa) / draws as f64).sqrt();
    assert!((s / draws as f64 - want).abs() < 3.0 * sd);
}

#[test]
fn empty_letter_falls_back_to_prior() {
    let prior = niw(0.01);
    let stats = GaussStats::new(2);
    assert_eq!(prior.posterior(&stats), prior);
}

#[test]
fn duration_rate_posterior_is_gamma_209_13() {
    let frames = frames_1d(&[0.0; 9]);
    let seq = WordSequence::new(
        [(0, 2), (2, 5), (5, 9)]
            .iter()
            .map(|&(a, b)| crate::segmentation::Segment {
                word: 0,
                start: a,
                end: b,
                letters: vec![LetterSpan {
                    letter: 0,
                    duration: b - a,
                }],
            })
            .collect(),
    );
    let am = AcousticModel::new(vec![gauss_1d(0.0, 1.0)], vec![20.0], 40);
    let prior = NiwPrior {
        mean: vec![0.0],
        kappa: 0.01,
        dof: 6.0,
        scale: DMatrix::identity(1, 1),
    };
    let mut r = rng::stream(5, &[]);
    let draws = 10_000;
    let mut total = 0.0;
    for _ in 0..draws {
        let next = resample_acoustic(&[&frames], std::slice::from_ref(&seq), &am, &prior, 200.0, 10.0, &mut r);
        total += next.duration_rates[0];
    }
    let mean = 209.0 / 13.0;
    let sd = (209.0f64 / (13.0 * 13.0) / draws as f64).sqrt();
    assert!((total / draws as f64 - mean).abs() < 3.0 * sd);
}

#[test]
fn repeated_transition_concentrates_bigram_row() {
    let v = 4;
    let mut counts = vec![vec![0u32; v]; v + 1];
    counts[1][2] = 10_000;
    let base = vec![0.25; v];
    let mut r = rng::stream(9, &[]);
    let (b, rows) = resample_hdp_rows(&counts, &base, 10.0, 10.0, &mut r);
    assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(rows[1][2] > 0.99);
    for row in &rows {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn unobserved_rows_follow_the_prior() {
    let v = 3;
    let counts = vec![vec![0u32; v]; v + 1];
    let base = vec![0.5, 0.3, 0.2];
    let mut r = rng::stream(10, &[]);
    let mut mean = vec![0.0; v];
    let draws = 4000;
    for _ in 0..draws {
        // zero counts: the base is redrawn from Dir(γ/V) and rows from Dir(αβ)
        let (b, rows) = resample_hdp_rows(&counts, &base, 10.0, 30.0, &mut r);
        for (m, (x, y)) in mean.iter_mut().zip(rows[0].iter().zip(&b)) {
            *m += x - y;
        }
    }
    // E[row | base] = base
    for m in mean {
        assert!((m / draws as f64).abs() < 0.01);
    }
}

fn tiny_corpus() -> Corpus {
    let (corpus, _) = crate::synth::generate(&crate::synth::SynthSpec {
        n_objects: 3,
        ..Default::default()
    })
    .unwrap();
    corpus
}

fn small_hyper(mode: Mode) -> HlmHyper {
    HlmHyper {
        n_letters: 6,
        n_words: 6,
        dur_shape: 50.0,
        dur_rate: 10.0,
        max_letter_duration: 12,
        max_word_letters: 3,
        mode,
        ..Default::default()
    }
}

#[test]
fn init_is_deterministic_and_valid() {
    let corpus = tiny_corpus();
    let hyper = small_hyper(Mode::DoubleArticulation);
    let a = init_params(&hyper, &corpus, 4).unwrap();
    let b = init_params(&hyper, &corpus, 4).unwrap();
    assert_eq!(a, b);
    a.check().unwrap();
    assert!(a.wm.spellings.iter().all(|s| s.len() <= 3));
    assert_ne!(a, init_params(&hyper, &corpus, 5).unwrap());
}

#[test]
fn single_letter_single_word_truncation() {
    let corpus = tiny_corpus();
    let hyper = HlmHyper {
        n_letters: 1,
        n_words: 1,
        ..small_hyper(Mode::DoubleArticulation)
    };
    let p = init_params(&hyper, &corpus, 0).unwrap();
    assert!(p.wm.spellings[0].iter().all(|&l| l == 0));
    let (next, seqs) = npb_daa_iteration(&corpus, &p, &hyper, 1).unwrap();
    next.check().unwrap();
    assert!(seqs.iter().flat_map(|s| s.words()).all(|w| w == 0));
}

#[test]
fn iteration_preserves_invariants_and_determinism() {
    let corpus = tiny_corpus();
    for mode in [Mode::DoubleArticulation, Mode::FlatHsmm] {
        let hyper = small_hyper(mode);
        let p = init_params(&hyper, &corpus, 3).unwrap();
        let (a, sa) = npb_daa_iteration(&corpus, &p, &hyper, 8).unwrap();
        let (b, sb) = npb_daa_iteration(&corpus, &p, &hyper, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        a.check().unwrap();
        for (u, s) in corpus.utterances.iter().zip(&sa) {
            s.check_tiling(u.n_frames()).unwrap();
            for seg in &s.segments {
                assert_eq!(seg.letter_ids(), p.wm.spellings[seg.word]);
            }
        }
        if mode == Mode::FlatHsmm {
            assert_eq!(a.wm.spellings, p.wm.spellings);
        }
    }
}

#[test]
fn flat_mode_spellings_never_change() {
    let corpus = tiny_corpus();
    let hyper = small_hyper(Mode::FlatHsmm);
    let mut p = init_params(&hyper, &corpus, 1).unwrap();
    let identity: Vec<Vec<usize>> = (0..6).map(|i| vec![i]).collect();
    for it in 0..5 {
        assert_eq!(p.wm.spellings, identity);
        p = npb_daa_iteration(&corpus, &p, &hyper, it).unwrap().0;
    }
}

#[test]
fn params_round_trip_through_json() {
    let corpus = tiny_corpus();
    let p = init_params(&small_hyper(Mode::DoubleArticulation), &corpus, 2).unwrap();
    let back = GlobalParams::from_json(&p.to_json()).unwrap();
    assert_eq!(p, back);
}

#[test]
fn fallback_covers_utterances_no_tiling_explains() {
    // every spelling needs 3 letters of at most 1 frame: only length-3
    // tilings exist, so a 2-frame utterance needs the fallback
    let p = params_1d(&[0.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], 1, vec![vec![0, 1, 0]]);
    let mut r = rng::stream(0, &[]);
    let s = sample_word_sequence("short", &frames_1d(&[0.0, 1.0]), &p, 10, &mut r).unwrap();
    s.check_tiling(2).unwrap();
    assert_eq!(s.segments[0].letter_ids(), vec![0, 1]);
}

#[test]
fn joint_loglik_trends_upward_on_planted_corpus() {
    let (corpus, _) = crate::synth::generate(&crate::synth::SynthSpec::default()).unwrap();
    let hyper = HlmHyper {
        n_letters: 12,
        n_words: 15,
        mean_word_letters: 2.5,
        max_word_letters: 4,
        ..small_hyper(Mode::DoubleArticulation)
    };
    let mut gains = Vec::new();
    for seed in 0..5 {
        let mut p = init_params(&hyper, &corpus, seed).unwrap();
        let mut trace = Vec::new();
        for it in 0..20 {
            let (next, seqs) = npb_daa_iteration(&corpus, &p, &hyper, 100 * seed + it).unwrap();
            trace.push(corpus_joint_loglik(&corpus, &seqs, &p));
            p = next;
        }
        let early: f64 = trace[..5].iter().sum::<f64>() / 5.0;
        let late: f64 = trace[15..].iter().sum::<f64>() / 5.0;
        gains.push(late - early);
    }
    gains.sort_by(f64::total_cmp);
    assert!(gains[2] > 0.0, "{gains:?}");
}

#[test]
fn flat_mode_recovers_single_letter_word_boundaries() {
    use crate::synth::{LexiconEntry, SynthSpec};
    let lexicon = (0..4)
        .map(|j| LexiconEntry {
            spelling: vec![j],
            category: None,
        })
        .collect();
    let spec = SynthSpec {
        n_phonemes: 4,
        lexicon,
        n_categories: 1,
        content_mass: 0.0,
        separation: 3.0,
        words_per_utterance: 4,
        ..SynthSpec::default()
    };
    let (corpus, _) = crate::synth::generate(&spec).unwrap();
    let hyper = HlmHyper {
        n_letters: 8,
        n_words: 8,
        ..small_hyper(Mode::FlatHsmm)
    };
    let mut aris = Vec::new();
    for seed in 0..3 {
        let mut p = init_params(&hyper, &corpus, seed).unwrap();
        let mut seqs = Vec::new();
        for it in 0..30 {
            let (next, s) = npb_daa_iteration(&corpus, &p, &hyper, 100 * seed + it).unwrap();
            p = next;
            seqs = s;
        }
        let (pred, _) = crate::corpus::frame_label_matrix(&corpus, &seqs).unwrap();
        let (truth, _) = corpus.gt_frame_labels().unwrap();
        aris.push(crate::eval::ari(&pred, &truth).unwrap());
    }
    aris.sort_by(f64::total_cmp);
    assert!(aris[1] >= 0.6, "{aris:?}");
}

#[test]
fn alignment_substrings_are_contiguous_pieces_of_an_alignment() {
    let alignments = vec![vec![3, 1, 4, 1, 5], vec![9, 2]];
    let mut r = rng::stream(6, &[]);
    for _ in 0..2000 {
        let s = alignment_substring(&alignments, 2.0, 3, &mut r);
        assert!((1..=3).contains(&s.len()));
        assert!(alignments.iter().any(|a| a.windows(s.len()).any(|w| w == s.as_slice())));
    }
}

#[test]
fn unused_words_draw_from_alignments_when_asked() {
    let corpus = tiny_corpus();
    let hyper = HlmHyper {
        unused_spellings: SpellingSource::Alignments,
        ..small_hyper(Mode::DoubleArticulation)
    };
    let p = init_params(&hyper, &corpus, 3).unwrap();
    let (next, seqs) = npb_daa_iteration(&corpus, &p, &hyper, 4).unwrap();
    next.check().unwrap();
    let used: std::collections::HashSet<usize> = seqs.iter().flat_map(|s| s.words()).collect();
    let alignments: Vec<Vec<usize>> = seqs.iter().map(|s| s.letters()).collect();
    for (w, s) in next.wm.spellings.iter().enumerate() {
        if !used.contains(&w) {
            assert!(alignments.iter().any(|a| a.windows(s.len()).any(|x| x == s.as_slice())), "{s:?}");
        }
    }
}
