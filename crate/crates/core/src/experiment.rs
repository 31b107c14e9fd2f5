//! Experiment runners: the four compared methods, per-trial metrics, run
//! traces, checkpoints, weight sweeps and aggregate reports.
//!
//! A run directory holds `run.json` (the resolved configuration),
//! `metrics.csv` (one row per trial) and one `trial_NNN/` directory per
//! trial with `trace.jsonl`, the final model dumps, segmentation-trace grids
//! and, with `dump_state`, per-iteration checkpoints.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cooccur::{self, IterationView, RunConfig, SirMode, WeightSchedule};
use crate::corpus::{frame_label_matrix, load_corpus, Corpus};
use crate::error::{Error, Result};
use crate::eval;
use crate::hdp_hlm::{self, GlobalParams, HlmHyper, Mode, SpellingSource};
use crate::mlda::{self, CategoryModel};
use crate::rng::{self, tag};
use crate::segmentation::WordSequence;
use crate::synth::{self, GroundTruth, SynthSpec};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Word discovery alone (one chain); categories from a final MLDA on its
    /// words.
    NpbDaa,
    /// Categorization alone, on ground-truth words or no words.
    MldaOnly,
    /// The co-occurrence loop with single-letter words.
    HdpHsmmMlda,
    #[default]
    CooccurDaa,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::NpbDaa, Method::MldaOnly, Method::HdpHsmmMlda, Method::CooccurDaa];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::NpbDaa => "npb-daa",
            Method::MldaOnly => "mlda-only",
            Method::HdpHsmmMlda => "hdp-hsmm-mlda",
            Method::CooccurDaa => "cooccur-daa",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Word input of the `mlda-only` method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MldaWords {
    #[default]
    None,
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Free-form tag carried into the metrics (e.g. a weight condition).
    pub label: String,
    /// Corpus directory; when absent the corpus is generated from `synth`.
    pub corpus: Option<PathBuf>,
    pub synth: SynthSpec,
    pub out: PathBuf,
    pub trials: usize,
    /// Trial `i` uses `seeds[i]` when given, else `seed + i`.
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub hyper: HlmHyper,
    pub run: RunConfig,
    pub mlda_words: MldaWords,
    pub dump_state: bool,
    /// Number of leading utterances whose segmentation trace is exported.
    pub trace_utterances: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        preset("desk-fast").expect("built-in preset")
    }
}

pub const PRESETS: [&str; 2] = ["paper-desk", "desk-fast"];

/// `paper-desk`: the published hyperparameters. `desk-fast`: a scaled-down
/// configuration for the default synthetic corpus.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig {
        method: Method::CooccurDaa,
        label: String::new(),
        corpus: None,
        synth: SynthSpec::default(),
        out: PathBuf::from("runs/default"),
        trials: 20,
        seed: 0,
        seeds: Vec::new(),
        hyper: HlmHyper::default(),
        run: RunConfig::default(),
        mlda_words: MldaWords::None,
        dump_state: false,
        trace_utterances: 3,
    };
    match name {
        "paper-desk" => Ok(base),
        "desk-fast" => Ok(ExperimentConfig {
            trials: 10,
            hyper: HlmHyper {
                n_letters: 12,
                n_words: 15,
                dur_shape: 50.0,
                dur_rate: 10.0,
                max_letter_duration: 12,
                mean_word_letters: 2.5,
                max_word_letters: 4,
                unused_spellings: SpellingSource::Alignments,
                ..HlmHyper::default()
            },
            run: RunConfig {
                candidates: 4,
                outer_iterations: 50,
                mlda: mlda::MldaConfig {
                    categories: 3,
                    alpha: 7.1,
                    iterations: 200,
                },
                ..RunConfig::default()
            },
            ..base
        }),
        other => Err(Error::InvalidArgument(format!(
            "unknown preset {other:?} (expected one of {PRESETS:?})"
        ))),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if !self.seeds.is_empty() && self.seeds.len() < self.trials {
            return Err(Error::InvalidArgument(format!(
                "{} trials but only {} seeds",
                self.trials,
                self.seeds.len()
            )));
        }
        if self.method != Method::MldaOnly {
            self.effective_hyper().validate()?;
        }
        self.run.validate()
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.trials as u64).map(|i| self.seed.wrapping_add(i)).collect()
        } else {
            self.seeds[..self.trials].to_vec()
        }
    }

    /// The hyperparameters the method actually runs with.
    pub fn effective_hyper(&self) -> HlmHyper {
        match self.method {
            Method::HdpHsmmMlda => HlmHyper {
                mode: Mode::FlatHsmm,
                n_letters: self.hyper.n_words,
                ..self.hyper.clone()
            },
            Method::NpbDaa | Method::CooccurDaa => HlmHyper {
                mode: Mode::DoubleArticulation,
                ..self.hyper.clone()
            },
            Method::MldaOnly => self.hyper.clone(),
        }
    }
}

/// The corpus of an experiment and its generator record, if known.
pub struct Dataset {
    pub corpus: Corpus,
    pub truth: Option<GroundTruth>,
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.corpus {
        Some(dir) => {
            let corpus = load_corpus(dir)?;
            let gt_path = dir.join(GROUND_TRUTH_FILE);
            let truth = if gt_path.exists() {
                let text = fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
                Some(serde_json::from_str(&text).map_err(|e| Error::Json {
                    path: gt_path.clone(),
                    source: e,
                })?)
            } else {
                None
            };
            Ok(Dataset { corpus, truth })
        }
        None => {
            let (corpus, truth) = synth::generate(&config.synth)?;
            Ok(Dataset {
                corpus,
                truth: Some(truth),
            })
        }
    }
}

/// One metrics row. Missing entries are metrics the method or the data
/// cannot provide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub method: String,
    pub label: String,
    pub trial: usize,
    pub seed: u64,
    pub phoneme_nmi: Option<f64>,
    pub phoneme_ari: Option<f64>,
    pub word_nmi: Option<f64>,
    pub word_ari: Option<f64>,
    pub category_acc: Option<f64>,
    pub category_nmi: Option<f64>,
    pub category_ari: Option<f64>,
    /// Word ARI over frames of category-predictive words only.
    pub content_word_ari: Option<f64>,
    pub function_word_ari: Option<f64>,
}

pub const METRIC_COLUMNS: [&str; 9] = [
    "phoneme_nmi",
    "phoneme_ari",
    "word_nmi",
    "word_ari",
    "category_acc",
    "category_nmi",
    "category_ari",
    "content_word_ari",
    "function_word_ari",
];

impl TrialMetrics {
    fn empty(config: &ExperimentConfig, trial: usize, seed: u64) -> Self {
        Self {
            method: config.method.to_string(),
            label: config.label.clone(),
            trial,
            seed,
            phoneme_nmi: None,
            phoneme_ari: None,
            word_nmi: None,
            word_ari: None,
            category_acc: None,
            category_nmi: None,
            category_ari: None,
            content_word_ari: None,
            function_word_ari: None,
        }
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "phoneme_nmi" => self.phoneme_nmi,
            "phoneme_ari" => self.phoneme_ari,
            "word_nmi" => self.word_nmi,
            "word_ari" => self.word_ari,
            "category_acc" => self.category_acc,
            "category_nmi" => self.category_nmi,
            "category_ari" => self.category_ari,
            "content_word_ari" => self.content_word_ari,
            "function_word_ari" => self.function_word_ari,
            _ => None,
        }
    }
}

/// Frame-level segmentation metrics; `None` when the corpus has no labels.
#[derive(Clone, Copy, Debug, Default)]
pub struct SegmentationScores {
    pub phoneme_nmi: f64,
    pub phoneme_ari: f64,
    pub word_nmi: f64,
    pub word_ari: f64,
    pub content_word_ari: Option<f64>,
    pub function_word_ari: Option<f64>,
}

pub fn score_segmentation(
    corpus: &Corpus,
    truth: Option<&GroundTruth>,
    seqs: &[WordSequence],
    flat: bool,
) -> Result<SegmentationScores> {
    let (gw, gl) = corpus.gt_frame_labels()?;
    let (pw, pl) = frame_label_matrix(corpus, seqs)?;
    // A flat model has no separate phoneme level: its segments serve as both.
    let pl = if flat { pw.clone() } else { pl };
    let mut s = SegmentationScores {
        phoneme_nmi: eval::nmi(&pl, &gl)?,
        phoneme_ari: eval::ari(&pl, &gl)?,
        word_nmi: eval::nmi(&pw, &gw)?,
        word_ari: eval::ari(&pw, &gw)?,
        content_word_ari: None,
        function_word_ari: None,
    };
    if let Some(gt) = truth {
        let content = gt.content_frames(corpus)?;
        let function: Vec<bool> = content.iter().map(|c| !c).collect();
        let restricted = |mask: &[bool]| -> Result<Option<f64>> {
            let (p, t) = eval::restrict(&pw, &gw, mask);
            if p.len() < 2 {
                return Ok(None);
            }
            eval::ari(&p, &t).map(Some)
        };
        s.content_word_ari = restricted(&content)?;
        s.function_word_ari = restricted(&function)?;
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug)]
pub struct CategoryScores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

pub fn score_categories(corpus: &Corpus, model: &CategoryModel) -> Result<CategoryScores> {
    let truth = corpus.gt_categories()?;
    let pred: Vec<i64> = model.object_categories().iter().map(|&k| k as i64).collect();
    Ok(CategoryScores {
        acc: eval::acc(&pred, &truth)?,
        nmi: eval::nmi(&pred, &truth)?,
        ari: eval::ari(&pred, &truth)?,
    })
}

fn has_frame_labels(corpus: &Corpus) -> bool {
    corpus
        .utterances
        .iter()
        .all(|u| u.gt_word_labels.is_some() && u.gt_letter_labels.is_some())
}

fn has_categories(corpus: &Corpus) -> bool {
    corpus.objects.iter().all(|o| o.gt_category.is_some())
}

/// Writes a file, attaching the path to any failure.
fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// `utterance,frame,word,letter` rows.
pub fn segmentation_csv(corpus: &Corpus, seqs: &[WordSequence]) -> String {
    let mut out = String::from("utterance,frame,word,letter\n");
    for (u, s) in corpus.utterances.iter().zip(seqs) {
        for (t, (w, l)) in s.frame_words().iter().zip(s.frame_letters()).enumerate() {
            out.push_str(&format!("{},{t},{w},{l}\n", u.id));
        }
    }
    out
}

/// Reads a segmentation dump back into per-utterance frame word and letter
/// ids, in corpus order.
pub fn read_segmentation_csv(path: &Path, corpus: &Corpus) -> Result<(Vec<i64>, Vec<i64>)> {
    #[derive(Deserialize)]
    struct Row {
        utterance: String,
        frame: usize,
        word: i64,
        letter: i64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut by_utt: BTreeMap<String, Vec<(usize, i64, i64)>> = BTreeMap::new();
    for row in reader.deserialize::<Row>() {
        let r = row.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        by_utt.entry(r.utterance).or_default().push((r.frame, r.word, r.letter));
    }
    let mut words = Vec::with_capacity(corpus.total_frames());
    let mut letters = Vec::with_capacity(corpus.total_frames());
    for u in &corpus.utterances {
        let mut rows = by_utt
            .remove(&u.id)
            .ok_or_else(|| Error::data(path, &u.id, "utterance missing from segmentation dump"))?;
        rows.sort_by_key(|r| r.0);
        if rows.len() != u.n_frames() || rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::data(path, &u.id, "frames do not cover the utterance exactly once"));
        }
        words.extend(rows.iter().map(|r| r.1));
        letters.extend(rows.iter().map(|r| r.2));
    }
    if let Some(extra) = by_utt.keys().next() {
        return Err(Error::data(path, extra, "utterance not in corpus"));
    }
    Ok((words, letters))
}

/// Per-trial sink for traces, grids and checkpoints.
struct TrialWriter<'a> {
    dir: PathBuf,
    corpus: &'a Corpus,
    truth: Option<&'a GroundTruth>,
    flat: bool,
    dump_state: bool,
    trace: String,
    /// Adopted word ids per iteration for each traced utterance.
    grids: Vec<Vec<Vec<usize>>>,
    labelled: bool,
}

impl<'a> TrialWriter<'a> {
    fn new(dir: PathBuf, ds: &'a Dataset, config: &ExperimentConfig, flat: bool) -> Result<Self> {
        create_dir(&dir)?;
        if config.dump_state {
            create_dir(&dir.join("checkpoints"))?;
        }
        let n = config.trace_utterances.min(ds.corpus.utterances.len());
        Ok(Self {
            dir,
            corpus: &ds.corpus,
            truth: ds.truth.as_ref(),
            flat,
            dump_state: config.dump_state,
            trace: String::new(),
            grids: vec![Vec::new(); n],
            labelled: has_frame_labels(&ds.corpus),
        })
    }

    fn snapshot(&self, seqs: &[WordSequence], model: Option<&CategoryModel>) -> Result<serde_json::Value> {
        let mut m = serde_json::Map::new();
        if self.labelled {
            let s = score_segmentation(self.corpus, self.truth, seqs, self.flat)?;
            m.insert("word_ari".into(), json!(s.word_ari));
            m.insert("phoneme_ari".into(), json!(s.phoneme_ari));
        }
        if let Some(model) = model.filter(|_| has_categories(self.corpus)) {
            m.insert("category_ari".into(), json!(score_categories(self.corpus, model)?.ari));
        }
        Ok(serde_json::Value::Object(m))
    }

    fn record(&mut self, value: serde_json::Value) {
        self.trace.push_str(&value.to_string());
        self.trace.push('\n');
    }

    fn adopt(&mut self, t: usize, params: &GlobalParams, seqs: &[WordSequence], model: Option<&CategoryModel>) -> Result<()> {
        for (grid, seq) in self.grids.iter_mut().zip(seqs) {
            grid.push(seq.frame_words());
        }
        if self.dump_state {
            let stem = self.dir.join("checkpoints").join(format!("iter_{t:04}"));
            let state = json!({ "iteration": t, "params": params, "categories": model });
            write_file(&stem.with_extension("json"), &state.to_string())?;
            write_file(&stem.with_extension("csv"), &segmentation_csv(self.corpus, seqs))?;
        }
        Ok(())
    }

    fn finish(&self, params: Option<&GlobalParams>, seqs: Option<&[WordSequence]>, model: Option<&CategoryModel>) -> Result<()> {
        write_file(&self.dir.join("trace.jsonl"), &self.trace)?;
        if let Some(p) = params {
            write_file(&self.dir.join("final_params.json"), &p.to_json())?;
        }
        if let Some(s) = seqs {
            write_file(&self.dir.join("final_segmentation.csv"), &segmentation_csv(self.corpus, s))?;
        }
        if let Some(m) = model {
            let text = serde_json::to_string(m).expect("category model serializes");
            write_file(&self.dir.join("final_categories.json"), &text)?;
        }
        for (grid, utt) in self.grids.iter().zip(&self.corpus.utterances) {
            let mut out = String::from("iteration");
            for f in 0..utt.n_frames() {
                out.push_str(&format!(",f{f}"));
            }
            out.push('\n');
            for (i, row) in grid.iter().enumerate() {
                out.push_str(&(i + 1).to_string());
                for w in row {
                    out.push_str(&format!(",{w}"));
                }
                out.push('\n');
            }
            write_file(&self.dir.join(format!("grid_{}.csv", utt.id)), &out)?;
        }
        Ok(())
    }
}

/// Word tokens per utterance from the generator record, or else from runs
/// of the frame labels (adjacent repeats of one word then merge).
fn ground_truth_words(ds: &Dataset) -> Result<Vec<Vec<usize>>> {
    if let Some(gt) = &ds.truth {
        return Ok(gt.utterance_words.clone());
    }
    ds.corpus
        .utterances
        .iter()
        .map(|u| {
            let labels = u
                .gt_word_labels
                .as_ref()
                .ok_or_else(|| Error::MissingLabels(format!("word labels of {}", u.id)))?;
            let mut runs: Vec<i64> = labels.clone();
            runs.dedup();
            runs.into_iter()
                .map(|w| {
                    usize::try_from(w).map_err(|_| Error::data(Path::new("labels"), &u.id, "negative word label"))
                })
                .collect()
        })
        .collect()
}

fn final_mlda(ds: &Dataset, config: &ExperimentConfig, bow: &[Vec<u32>], word_weight: f64, seed: u64) -> Result<CategoryModel> {
    let inputs = cooccur::mlda_inputs(&ds.corpus, bow, word_weight, &config.run)?;
    mlda::run_mlda(&inputs, &config.run.mlda, rng::derive(seed, &[tag::MLDA]))
}

fn fill_segmentation(m: &mut TrialMetrics, ds: &Dataset, seqs: &[WordSequence], flat: bool) -> Result<()> {
    if !has_frame_labels(&ds.corpus) {
        return Ok(());
    }
    let s = score_segmentation(&ds.corpus, ds.truth.as_ref(), seqs, flat)?;
    m.phoneme_nmi = Some(s.phoneme_nmi);
    m.phoneme_ari = Some(s.phoneme_ari);
    m.word_nmi = Some(s.word_nmi);
    m.word_ari = Some(s.word_ari);
    m.content_word_ari = s.content_word_ari;
    m.function_word_ari = s.function_word_ari;
    Ok(())
}

fn fill_categories(m: &mut TrialMetrics, ds: &Dataset, model: &CategoryModel) -> Result<()> {
    if !has_categories(&ds.corpus) {
        return Ok(());
    }
    let c = score_categories(&ds.corpus, model)?;
    m.category_acc = Some(c.acc);
    m.category_nmi = Some(c.nmi);
    m.category_ari = Some(c.ari);
    Ok(())
}

/// One NPB-DAA chain. Uses the same stream keys as candidate 0 of the
/// co-occurrence loop, so a single-candidate loop follows the same
/// segmentation trajectory.
pub fn run_npb_daa_chain(
    corpus: &Corpus,
    hyper: &HlmHyper,
    iterations: usize,
    seed: u64,
    mut observer: impl FnMut(usize, &GlobalParams, &[WordSequence]) -> Result<()>,
) -> Result<(GlobalParams, Vec<WordSequence>)> {
    let mut params = hdp_hlm::init_params(hyper, corpus, rng::derive(seed, &[tag::INIT, 0]))?;
    let mut seqs = Vec::new();
    for t in 1..=iterations {
        let (next, s) = hdp_hlm::npb_daa_iteration(corpus, &params, hyper, rng::derive(seed, &[tag::SEGMENT, t as u64, 0]))?;
        params = next;
        seqs = s;
        observer(t, &params, &seqs)?;
    }
    Ok((params, seqs))
}

/// Runs one trial of the configured method and writes its artifacts to
/// `dir`.
pub fn run_trial(ds: &Dataset, config: &ExperimentConfig, trial: usize, seed: u64, dir: &Path) -> Result<TrialMetrics> {
    let mut metrics = TrialMetrics::empty(config, trial, seed);
    let hyper = config.effective_hyper();
    let flat = config.method == Method::HdpHsmmMlda;
    let mut writer = TrialWriter::new(dir.to_path_buf(), ds, config, flat)?;
    match config.method {
        Method::MldaOnly => {
            let bow = match config.mlda_words {
                MldaWords::GroundTruth => {
                    let words = ground_truth_words(ds)?;
                    let v = words.iter().flatten().max().map_or(1, |m| m + 1);
                    let mut bow = vec![vec![0u32; v]; ds.corpus.objects.len()];
                    for (ws, d) in words.iter().zip(ds.corpus.utterance_objects()) {
                        for &w in ws {
                            bow[d][w] += 1;
                        }
                    }
                    bow
                }
                MldaWords::None => Vec::new(),
            };
            let weight = match config.mlda_words {
                MldaWords::GroundTruth => config.run.word_weight.at(config.run.outer_iterations),
                MldaWords::None => 0.0,
            };
            let model = final_mlda(ds, config, &bow, weight, seed)?;
            writer.record(json!({ "iteration": 1, "candidate": 0, "word_weight": weight }));
            fill_categories(&mut metrics, ds, &model)?;
            writer.finish(None, None, Some(&model))?;
        }
        Method::NpbDaa => {
            let (params, seqs) = run_npb_daa_chain(&ds.corpus, &hyper, config.run.outer_iterations, seed, |t, p, s| {
                let snap = writer.snapshot(s, None)?;
                writer.record(json!({
                    "iteration": t, "candidate": 0, "parent": 0, "word_weight": null,
                    "raw_weight": null, "weight": 1.0, "resample_count": 1, "best": true, "metrics": snap,
                }));
                writer.adopt(t, p, s, None)
            })?;
            let weight = config.run.word_weight.at(config.run.outer_iterations);
            let bow = cooccur::bag_of_words(&seqs, &ds.corpus, params.n_words());
            let model = final_mlda(ds, config, &bow, weight, seed)?;
            fill_segmentation(&mut metrics, ds, &seqs, false)?;
            fill_categories(&mut metrics, ds, &model)?;
            writer.finish(Some(&params), Some(&seqs), Some(&model))?;
        }
        Method::CooccurDaa | Method::HdpHsmmMlda => {
            let run = RunConfig {
                seed,
                ..config.run.clone()
            };
            let result = cooccur::run_cooccurrence_daa(&ds.corpus, &hyper, &run, |v: &IterationView<'_>| {
                for c in v.candidates {
                    let snap = writer.snapshot(&c.sequences, Some(&c.category_model))?;
                    let log_weight = (run.sir_mode == SirMode::Ur).then_some(c.weight_raw);
                    writer.record(json!({
                        "iteration": v.t, "candidate": c.index, "parent": c.parent,
                        "word_weight": v.word_weight, "raw_weight": c.weight_raw, "log_weight": log_weight,
                        "weight": c.weight_norm, "resample_count": v.resample_counts[c.index],
                        "best": c.index == v.best, "metrics": snap,
                    }));
                }
                let best = &v.candidates[v.best];
                writer.adopt(v.t, &best.params, &best.sequences, Some(&best.category_model))
            })?;
            let c = &result.final_candidate;
            fill_segmentation(&mut metrics, ds, &c.sequences, flat)?;
            fill_categories(&mut metrics, ds, &c.category_model)?;
            writer.finish(Some(&c.params), Some(&c.sequences), Some(&c.category_model))?;
        }
    }
    Ok(metrics)
}

fn metrics_csv(rows: &[TrialMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Csv {
            path: PathBuf::from(METRICS_FILE),
            source: e,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Runs every trial (in parallel) and writes the run directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialMetrics>> {
    config.validate()?;
    let ds = load_dataset(config)?;
    run_experiment_on(&ds, config)
}

pub fn run_experiment_on(ds: &Dataset, config: &ExperimentConfig) -> Result<Vec<TrialMetrics>> {
    config.validate()?;
    create_dir(&config.out)?;
    let resolved = serde_json::to_string_pretty(config).expect("config serializes");
    write_file(&config.out.join("run.json"), &resolved)?;
    let seeds = config.trial_seeds();
    let rows = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| run_trial(ds, config, i, seed, &config.out.join(format!("trial_{i:03}"))))
        .collect::<Result<Vec<_>>>()?;
    write_file(&config.out.join(METRICS_FILE), &metrics_csv(&rows)?)?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub word_weight: f64,
    pub metrics: TrialMetrics,
}

/// One run per word weight with the configured non-word weights; writes
/// `sweep.csv` plus a run directory per weight.
pub fn sweep(config: &ExperimentConfig, weights: &[f64]) -> Result<Vec<SweepRow>> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one weight".into()));
    }
    config.validate()?;
    let ds = load_dataset(config)?;
    let mut rows = Vec::new();
    for &w in weights {
        let c = ExperimentConfig {
            run: RunConfig {
                word_weight: WeightSchedule::fixed(w),
                ..config.run.clone()
            },
            out: config.out.join(format!("weight_{w}")),
            label: if config.label.is_empty() {
                format!("word_weight={w}")
            } else {
                config.label.clone()
            },
            ..config.clone()
        };
        for m in run_experiment_on(&ds, &c)? {
            rows.push(SweepRow {
                word_weight: w,
                metrics: m,
            });
        }
    }
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        let mut rec = vec![r.word_weight.to_string(), r.metrics.method.clone(), r.metrics.label.clone()];
        rec.push(r.metrics.trial.to_string());
        rec.push(r.metrics.seed.to_string());
        for col in METRIC_COLUMNS {
            rec.push(r.metrics.get(col).map(|x| x.to_string()).unwrap_or_default());
        }
        wtr.write_record(&rec).map_err(|e| Error::Csv {
            path: config.out.join("sweep.csv"),
            source: e,
        })?;
    }
    let body = String::from_utf8(wtr.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)
        .expect("csv output is utf-8");
    let header = format!("word_weight,method,label,trial,seed,{}\n", METRIC_COLUMNS.join(","));
    create_dir(&config.out)?;
    write_file(&config.out.join("sweep.csv"), &(header + &body))?;
    Ok(rows)
}

/// Reads a run directory's metrics.
pub fn read_metrics(dir: &Path) -> Result<Vec<TrialMetrics>> {
    let path = dir.join(METRICS_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::Csv {
        path: path.clone(),
        source: e,
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.clone(),
            source: e,
        })?
        .clone();
    let expected: Vec<&str> = ["method", "label", "trial", "seed"].into_iter().chain(METRIC_COLUMNS).collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::data(&path, "header", "inconsistent metric schema"));
    }
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| Error::Csv {
                path: path.clone(),
                source: e,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub method: String,
    pub label: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single trial.
    pub std_sample: f64,
    pub std_population: f64,
}

/// Mean and both standard deviations of a nonempty sample.
pub fn mean_std(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    let sample = if xs.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sample, (ss / n).sqrt())
}

/// Aggregates the metrics of several run directories, grouped by
/// (method, label) in first-seen order.
pub fn summarize(rows: &[TrialMetrics]) -> Vec<Summary> {
    let mut groups: Vec<((String, String), Vec<&TrialMetrics>)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.label.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut out = Vec::new();
    for ((method, label), g) in groups {
        for metric in METRIC_COLUMNS {
            let xs: Vec<f64> = g.iter().filter_map(|r| r.get(metric)).collect();
            if xs.is_empty() {
                continue;
            }
            let (mean, std_sample, std_population) = mean_std(&xs);
            out.push(Summary {
                method: method.clone(),
                label: label.clone(),
                metric: metric.to_string(),
                n: xs.len(),
                mean,
                std_sample,
                std_population,
            });
        }
    }
    out
}

/// Writes `summary.csv` and `summary.md` into `out` and returns the
/// summaries.
pub fn report(run_dirs: &[PathBuf], out: &Path) -> Result<Vec<Summary>> {
    if run_dirs.is_empty() {
        return Err(Error::InvalidArgument("report needs at least one run directory".into()));
    }
    let mut rows = Vec::new();
    for d in run_dirs {
        rows.extend(read_metrics(d)?);
    }
    let summaries = summarize(&rows);
    create_dir(out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &summaries {
        w.serialize(s).map_err(|e| Error::Csv {
            path: out.join("summary.csv"),
            source: e,
        })?;
    }
    let csv_text = String::from_utf8(w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?)
        .expect("csv output is utf-8");
    write_file(&out.join("summary.csv"), &csv_text)?;

    let mut md = String::new();
    md.push_str("<!-- mean ± sample standard deviation (n - 1) over trials; NMI uses the arithmetic-mean normalizer -->\n\n");
    md.push_str("| method | label |");
    for m in METRIC_COLUMNS {
        md.push_str(&format!(" {m} |"));
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---|".repeat(METRIC_COLUMNS.len()));
    md.push('\n');
    let mut keys: Vec<(String, String)> = Vec::new();
    for s in &summaries {
        let k = (s.method.clone(), s.label.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (method, label) in keys {
        md.push_str(&format!("| {method} | {label} |"));
        for m in METRIC_COLUMNS {
            match summaries.iter().find(|s| s.method == method && s.label == label && s.metric == m) {
                Some(s) => md.push_str(&format!(" {:.3} ± {:.3} |", s.mean, s.std_sample)),
                None => md.push_str(" |"),
            }
        }
        md.push('\n');
    }
    let mut f = fs::File::create(out.join("summary.md")).map_err(|e| Error::io(out.join("summary.md"), e))?;
    f.write_all(md.as_bytes()).map_err(|e| Error::io(out.join("summary.md"), e))?;
    Ok(summaries)
}

/// Metrics of saved predictions against corpus labels, as
/// `(target, metric, value)` rows.
pub fn evaluate_predictions(corpus: &Corpus, trial_dir: &Path) -> Result<Vec<(String, String, f64)>> {
    let mut rows = Vec::new();
    let seg = trial_dir.join("final_segmentation.csv");
    if seg.exists() {
        let (pw, pl) = read_segmentation_csv(&seg, corpus)?;
        let (gw, gl) = corpus.gt_frame_labels()?;
        for (target, p, g) in [("phoneme", &pl, &gl), ("word", &pw, &gw)] {
            rows.push((target.to_string(), "nmi".to_string(), eval::nmi(p, g)?));
            rows.push((target.to_string(), "ari".to_string(), eval::ari(p, g)?));
        }
    }
    let cat = trial_dir.join("final_categories.json");
    if cat.exists() {
        let text = fs::read_to_string(&cat).map_err(|e| Error::io(&cat, e))?;
        let model: CategoryModel = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: cat.clone(),
            source: e,
        })?;
        if model.pi.len() != corpus.objects.len() {
            return Err(Error::data(&cat, "pi", "object count differs from the corpus"));
        }
        let s = score_categories(corpus, &model)?;
        for (name, v) in [("acc", s.acc), ("nmi", s.nmi), ("ari", s.ari)] {
            rows.push(("category".to_string(), name.to_string(), v));
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} holds no final_segmentation.csv or final_categories.json",
            trial_dir.display()
        )));
    }
    Ok(rows)
}

/// Convenience for tests and benches: the default synthetic dataset.
pub fn default_dataset() -> Result<Dataset> {
    let (corpus, truth) = synth::generate(&SynthSpec::default())?;
    Ok(Dataset {
        corpus,
        truth: Some(truth),
    })
}
