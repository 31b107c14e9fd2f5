use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use daa_bench::Fixture;
use daa_core::cooccur::{self, RunConfig};
use daa_core::hdp_hlm::{self, sample_word_sequence, LetterScores, SegmentTable};
use daa_core::mlda::MldaSampler;
use daa_core::rng;

fn segmentation(c: &mut Criterion) {
    let fx = Fixture::new();
    let params = fx.params(0);
    let utt = &fx.data.corpus.utterances[0];
    c.bench_function("segment_table", |b| {
        b.iter(|| {
            let scores = LetterScores::new(&utt.frames, &params.am);
            SegmentTable::new(&scores, &params)
        })
    });
    let mut r = rng::stream(0, &[]);
    c.bench_function("sample_word_sequence", |b| {
        b.iter(|| sample_word_sequence(&utt.id, &utt.frames, &params, fx.hyper.max_utterance_len, &mut r).unwrap())
    });
    c.bench_function("npb_daa_iteration", |b| {
        b.iter(|| hdp_hlm::npb_daa_iteration(&fx.data.corpus, &params, &fx.hyper, 3).unwrap())
    });
}

fn mlda(c: &mut Criterion) {
    let fx = Fixture::new();
    let inputs = fx.mlda_inputs();
    let cfg = &fx.run.mlda;
    c.bench_function("mlda_sweep", |b| {
        b.iter_batched(
            || MldaSampler::new(&inputs, cfg.categories, cfg.alpha, rng::stream(0, &[])).unwrap(),
            |mut s| s.sweep(),
            BatchSize::SmallInput,
        )
    });
}

fn cooccurrence(c: &mut Criterion) {
    let fx = Fixture::new();
    let run = RunConfig {
        candidates: 4,
        outer_iterations: 1,
        ..fx.run.clone()
    };
    let mut group = c.benchmark_group("cooccurrence");
    group.sample_size(10);
    group.bench_function("one_iteration_q4", |b| {
        b.iter(|| cooccur::run_cooccurrence_daa(&fx.data.corpus, &fx.hyper, &run, |_| Ok(())).unwrap())
    });
    group.finish();
}

criterion_group!(benches, segmentation, mlda, cooccurrence);
criterion_main!(benches);
