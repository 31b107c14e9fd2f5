use std::fs;

use daa_core::cooccur::{self, RunConfig, WeightSchedule};
use daa_core::experiment::{self, preset, Method};
use daa_core::WordSequence;

fn small_run(candidates: usize, iterations: usize, seed: u64) -> RunConfig {
    let mut run = preset("desk-fast").unwrap().run;
    run.candidates = candidates;
    run.outer_iterations = iterations;
    run.mlda.iterations = 20;
    run.seed = seed;
    run
}

#[test]
fn single_candidate_loop_follows_the_plain_chain() {
    let ds = experiment::default_dataset().unwrap();
    let hyper = preset("desk-fast").unwrap().hyper;
    let run = small_run(1, 3, 11);

    let mut looped: Vec<Vec<WordSequence>> = Vec::new();
    let result = cooccur::run_cooccurrence_daa(&ds.corpus, &hyper, &run, |v| {
        assert_eq!(v.candidates.len(), 1);
        assert_eq!(v.candidates[0].weight_norm, 1.0);
        assert_eq!(v.resample_counts, &[1]);
        looped.push(v.candidates[0].sequences.clone());
        Ok(())
    })
    .unwrap();
    assert!(result.weights.iter().all(|w| w == &[1.0]));

    let mut plain: Vec<Vec<WordSequence>> = Vec::new();
    experiment::run_npb_daa_chain(&ds.corpus, &hyper, 3, 11, |_, _, s| {
        plain.push(s.to_vec());
        Ok(())
    })
    .unwrap();
    assert_eq!(looped, plain);
}

#[test]
fn zero_word_weight_gives_uniform_weights() {
    let ds = experiment::default_dataset().unwrap();
    let hyper = preset("desk-fast").unwrap().hyper;
    let mut run = small_run(3, 2, 4);
    run.word_weight = WeightSchedule::fixed(0.0);
    let result = cooccur::run_cooccurrence_daa(&ds.corpus, &hyper, &run, |v| {
        assert_eq!(v.word_weight, 0.0);
        // every candidate's category model sees only the non-word modalities
        assert!(v.candidates.iter().all(|c| c.category_model.modality(cooccur::WORD).is_none()));
        Ok(())
    })
    .unwrap();
    for w in &result.weights {
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15), "{w:?}");
    }
    assert_eq!(result.best_per_iteration, vec![0, 0]);
}

#[test]
fn metrics_are_byte_identical_across_worker_counts() {
    let ds = experiment::default_dataset().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut config = preset("desk-fast").unwrap();
    config.method = Method::CooccurDaa;
    config.trials = 2;
    config.run = small_run(3, 2, 0);

    let mut outputs = Vec::new();
    for threads in [1, 4] {
        let mut c = config.clone();
        c.out = dir.path().join(format!("threads_{threads}"));
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| experiment::run_experiment_on(&ds, &c)).unwrap();
        outputs.push(fs::read(c.out.join(experiment::METRICS_FILE)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn every_method_writes_a_complete_run() {
    let ds = experiment::default_dataset().unwrap();
    let dir = tempfile::tempdir().unwrap();
    for method in Method::ALL {
        let mut c = preset("desk-fast").unwrap();
        c.method = method;
        c.trials = 1;
        c.run = small_run(2, 2, 0);
        c.out = dir.path().join(method.as_str());
        let rows = experiment::run_experiment_on(&ds, &c).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert!(r.category_ari.is_some(), "{method}");
        assert_eq!(r.word_ari.is_some(), method != Method::MldaOnly, "{method}");
        let back = experiment::read_metrics(&c.out).unwrap();
        assert_eq!(&back, &rows);
    }
}
