//! Utterance feature sequences, multimodal object histograms and optional
//! ground truth, plus the on-disk corpus layout:
//!
//! ```text
//! <dir>/manifest.json        feature_dim, modality_bins, utterance list
//! <dir>/objects.json         per-object histograms and gt_category
//! <dir>/features/<utt>.csv   T rows x F columns, no header
//! <dir>/labels/<utt>.csv     header `word,letter`, one row per frame
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::WordSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Haptic,
    Vision,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Haptic, Modality::Vision];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Haptic => "haptic",
            Modality::Vision => "vision",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-major `T x F` matrix of frame features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    n_frames: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("ragged feature rows".into()));
        }
        Ok(Self {
            n_frames: rows.len(),
            dim,
            data: rows.concat(),
        })
    }

    pub fn from_flat(n_frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_frames * dim {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form a {n_frames}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self {
            n_frames,
            dim,
            data,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Copy of frames `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> FeatureMatrix {
        FeatureMatrix {
            n_frames: end - start,
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub object_id: String,
    pub frames: FeatureMatrix,
    pub gt_word_labels: Option<Vec<i64>>,
    pub gt_letter_labels: Option<Vec<i64>>,
}

impl Utterance {
    pub fn n_frames(&self) -> usize {
        self.frames.n_frames()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub object_id: String,
    pub histograms: BTreeMap<Modality, Vec<f64>>,
    pub gt_category: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub objects: Vec<ObjectRecord>,
}

impl Corpus {
    /// Builds a corpus and checks every invariant.
    pub fn new(utterances: Vec<Utterance>, objects: Vec<ObjectRecord>) -> Result<Self> {
        let corpus = Self {
            utterances,
            objects,
        };
        corpus.validate(Path::new("<memory>"))?;
        Ok(corpus)
    }

    pub fn feature_dim(&self) -> usize {
        self.utterances.first().map_or(0, |u| u.frames.dim())
    }

    pub fn total_frames(&self) -> usize {
        self.utterances.iter().map(Utterance::n_frames).sum()
    }

    pub fn max_utterance_len(&self) -> usize {
        self.utterances.iter().map(Utterance::n_frames).max().unwrap_or(0)
    }

    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.object_id == id)
    }

    /// Object index of every utterance, in corpus order.
    pub fn utterance_objects(&self) -> Vec<usize> {
        let index: HashMap<&str, usize> = self
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.object_id.as_str(), i))
            .collect();
        self.utterances
            .iter()
            .map(|u| index[u.object_id.as_str()])
            .collect()
    }

    /// Bin count per modality, taken from the first object carrying it.
    pub fn modality_bins(&self) -> BTreeMap<Modality, usize> {
        let mut bins = BTreeMap::new();
        for o in &self.objects {
            for (m, h) in &o.histograms {
                bins.entry(*m).or_insert(h.len());
            }
        }
        bins
    }

    /// Ground-truth object categories; fails if any object lacks one.
    pub fn gt_categories(&self) -> Result<Vec<i64>> {
        self.objects
            .iter()
            .map(|o| {
                o.gt_category
                    .ok_or_else(|| Error::MissingLabels(format!("object {}", o.object_id)))
            })
            .collect()
    }

    /// Concatenated ground-truth (word, letter) frame labels.
    pub fn gt_frame_labels(&self) -> Result<(Vec<i64>, Vec<i64>)> {
        let mut words = Vec::with_capacity(self.total_frames());
        let mut letters = Vec::with_capacity(self.total_frames());
        for u in &self.utterances {
            let w = u
                .gt_word_labels
                .as_ref()
                .ok_or_else(|| Error::MissingLabels(format!("word labels of {}", u.id)))?;
            let l = u
                .gt_letter_labels
                .as_ref()
                .ok_or_else(|| Error::MissingLabels(format!("letter labels of {}", u.id)))?;
            words.extend_from_slice(w);
            letters.extend_from_slice(l);
        }
        Ok((words, letters))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let dim = self.feature_dim();
        let mut seen_utt = std::collections::HashSet::new();
        for u in &self.utterances {
            if !seen_utt.insert(u.id.as_str()) {
                return Err(Error::data(path, &u.id, "duplicate utterance id"));
            }
            let t = u.n_frames();
            if t == 0 || u.frames.dim() == 0 {
                return Err(Error::data(path, &u.id, "utterance needs at least 1 frame and 1 feature"));
            }
            if u.frames.dim() != dim {
                return Err(Error::data(
                    path,
                    &u.id,
                    format!("dimension mismatch: {} features, expected {dim}", u.frames.dim()),
                ));
            }
            if let Some(bad) = u.frames.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(Error::data(
                    path,
                    &u.id,
                    format!("non-finite value at frame {}, column {}", bad / dim, bad % dim),
                ));
            }
            for (name, labels) in [("word", &u.gt_word_labels), ("letter", &u.gt_letter_labels)] {
                if let Some(l) = labels {
                    if l.len() != t {
                        return Err(Error::data(
                            path,
                            &u.id,
                            format!("{name} labels have length {}, expected {t}", l.len()),
                        ));
                    }
                }
            }
        }

        let bins = self.modality_bins();
        let mut seen_obj = std::collections::HashSet::new();
        for o in &self.objects {
            if !seen_obj.insert(o.object_id.as_str()) {
                return Err(Error::data(path, &o.object_id, "duplicate object id"));
            }
            for (m, h) in &o.histograms {
                if h.is_empty() {
                    return Err(Error::data(path, &o.object_id, format!("{m} histogram has no bins")));
                }
                if h.len() != bins[m] {
                    return Err(Error::data(
                        path,
                        &o.object_id,
                        format!("{m} histogram has {} bins, expected {}", h.len(), bins[m]),
                    ));
                }
                if h.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::data(
                        path,
                        &o.object_id,
                        format!("{m} histogram has a negative or non-finite entry"),
                    ));
                }
            }
        }

        let mut per_object = vec![0usize; self.objects.len()];
        for u in &self.utterances {
            match self.object_index(&u.object_id) {
                Some(d) => per_object[d] += 1,
                None => {
                    return Err(Error::DanglingObject {
                        utterance: u.id.clone(),
                        object: u.object_id.clone(),
                    })
                }
            }
        }
        if let Some(d) = per_object.iter().position(|&n| n == 0) {
            return Err(Error::data(path, &self.objects[d].object_id, "object has no utterances"));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    feature_dim: usize,
    #[serde(default)]
    modality_bins: BTreeMap<Modality, usize>,
    utterances: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    object_id: String,
    frames: usize,
    #[serde(default)]
    labels: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectsFile {
    objects: Vec<ObjectEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObjectEntry {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_category: Option<i64>,
    histograms: BTreeMap<Modality, Vec<f64>>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path, has_headers: bool) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(has_headers)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn read_features(path: &Path, id: &str, dim: usize) -> Result<FeatureMatrix> {
    let mut data = Vec::new();
    let mut n = 0;
    for (row, rec) in csv_reader(path, false)?.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != dim {
            return Err(Error::data(
                path,
                id,
                format!("dimension mismatch at row {row}: {} columns, expected {dim}", rec.len()),
            ));
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::data(path, id, format!("row {row}: cannot parse {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::data(path, id, format!("non-finite value at row {row}")));
            }
            data.push(v);
        }
        n += 1;
    }
    FeatureMatrix::from_flat(n, dim, data)
}

type LabelColumns = (Option<Vec<i64>>, Option<Vec<i64>>);

fn read_labels(path: &Path, id: &str) -> Result<LabelColumns> {
    let mut words = Vec::new();
    let mut letters = Vec::new();
    for (row, rec) in csv_reader(path, true)?.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != 2 {
            return Err(Error::data(path, id, format!("row {row}: expected 2 columns")));
        }
        let parse = |s: &str| -> Result<Option<i64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::data(path, id, format!("row {row}: bad label {s:?}")))
            }
        };
        words.push(parse(&rec[0])?);
        letters.push(parse(&rec[1])?);
    }
    let column = |v: Vec<Option<i64>>, name: &str| -> Result<Option<Vec<i64>>> {
        if v.iter().all(Option::is_none) {
            Ok(None)
        } else {
            v.into_iter()
                .collect::<Option<Vec<_>>>()
                .map(Some)
                .ok_or_else(|| Error::data(path, id, format!("{name} column partially empty")))
        }
    };
    Ok((column(words, "word")?, column(letters, "letter")?))
}

/// Reads and validates a corpus directory.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = read_json(&manifest_path)?;
    let objects_path = dir.join("objects.json");
    let objects_file: ObjectsFile = read_json(&objects_path)?;

    let objects: Vec<ObjectRecord> = objects_file
        .objects
        .into_iter()
        .map(|o| ObjectRecord {
            object_id: o.id,
            histograms: o.histograms,
            gt_category: o.gt_category,
        })
        .collect();
    for o in &objects {
        for (m, h) in &o.histograms {
            if let Some(&expected) = manifest.modality_bins.get(m) {
                if expected != h.len() {
                    return Err(Error::data(
                        &objects_path,
                        &o.object_id,
                        format!("{m} histogram has {} bins, manifest says {expected}", h.len()),
                    ));
                }
            }
        }
    }

    let mut utterances = Vec::with_capacity(manifest.utterances.len());
    for entry in &manifest.utterances {
        if !objects.iter().any(|o| o.object_id == entry.object_id) {
            return Err(Error::DanglingObject {
                utterance: entry.id.clone(),
                object: entry.object_id.clone(),
            });
        }
        let feat_path = dir.join("features").join(format!("{}.csv", entry.id));
        let frames = read_features(&feat_path, &entry.id, manifest.feature_dim)?;
        if frames.n_frames() != entry.frames {
            return Err(Error::data(
                &feat_path,
                &entry.id,
                format!("{} frames, manifest says {}", frames.n_frames(), entry.frames),
            ));
        }
        let (gt_word_labels, gt_letter_labels) = if entry.labels {
            read_labels(&dir.join("labels").join(format!("{}.csv", entry.id)), &entry.id)?
        } else {
            (None, None)
        };
        utterances.push(Utterance {
            id: entry.id.clone(),
            object_id: entry.object_id.clone(),
            frames,
            gt_word_labels,
            gt_letter_labels,
        });
    }

    let corpus = Corpus {
        utterances,
        objects,
    };
    corpus.validate(&manifest_path)?;
    Ok(corpus)
}

/// Writes `corpus` in the directory layout read by [`load_corpus`].
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let features_dir = dir.join("features");
    let labels_dir = dir.join("labels");
    fs::create_dir_all(&features_dir).map_err(|e| Error::io(&features_dir, e))?;

    let mut entries = Vec::new();
    for u in &corpus.utterances {
        let path = features_dir.join(format!("{}.csv", u.id));
        let mut text = String::new();
        for row in u.frames.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

        let has_labels = u.gt_word_labels.is_some() || u.gt_letter_labels.is_some();
        if has_labels {
            fs::create_dir_all(&labels_dir).map_err(|e| Error::io(&labels_dir, e))?;
            let path = labels_dir.join(format!("{}.csv", u.id));
            let mut text = String::from("word,letter\n");
            let cell = |l: &Option<Vec<i64>>, t: usize| {
                l.as_ref().map(|v| v[t].to_string()).unwrap_or_default()
            };
            for t in 0..u.n_frames() {
                text.push_str(&format!(
                    "{},{}\n",
                    cell(&u.gt_word_labels, t),
                    cell(&u.gt_letter_labels, t)
                ));
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        entries.push(ManifestEntry {
            id: u.id.clone(),
            object_id: u.object_id.clone(),
            frames: u.n_frames(),
            labels: has_labels,
        });
    }

    let manifest = Manifest {
        feature_dim: corpus.feature_dim(),
        modality_bins: corpus.modality_bins(),
        utterances: entries,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    let objects = ObjectsFile {
        objects: corpus
            .objects
            .iter()
            .map(|o| ObjectEntry {
                id: o.object_id.clone(),
                gt_category: o.gt_category,
                histograms: o.histograms.clone(),
            })
            .collect(),
    };
    write_json(&dir.join("objects.json"), &objects)
}

/// Flattens per-utterance segmentations into corpus-order frame labels
/// `(word ids, letter ids)`.
pub fn frame_label_matrix(corpus: &Corpus, seqs: &[WordSequence]) -> Result<(Vec<i64>, Vec<i64>)> {
    if seqs.len() != corpus.utterances.len() {
        return Err(Error::InvalidArgument(format!(
            "{} segmentations for {} utterances",
            seqs.len(),
            corpus.utterances.len()
        )));
    }
    let mut words = Vec::with_capacity(corpus.total_frames());
    let mut letters = Vec::with_capacity(corpus.total_frames());
    for (u, seq) in corpus.utterances.iter().zip(seqs) {
        seq.check_tiling(u.n_frames()).map_err(|message| Error::Tiling {
            utterance: u.id.clone(),
            message,
        })?;
        words.extend(seq.frame_words().into_iter().map(|w| w as i64));
        letters.extend(seq.frame_letters().into_iter().map(|l| l as i64));
    }
    Ok((words, letters))
}

/// Path of a corpus file, for diagnostics.
pub fn features_path(dir: &Path, utterance: &str) -> PathBuf {
    dir.join("features").join(format!("{utterance}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{LetterSpan, Segment};

    fn utt(id: &str, obj: &str, t: usize) -> Utterance {
        let rows: Vec<Vec<f64>> = (0..t).map(|i| vec![i as f64, 0.5]).collect();
        Utterance {
            id: id.into(),
            object_id: obj.into(),
            frames: FeatureMatrix::from_rows(&rows).unwrap(),
            gt_word_labels: Some(vec![1; t]),
            gt_letter_labels: Some(vec![2; t]),
        }
    }

    fn obj(id: &str) -> ObjectRecord {
        ObjectRecord {
            object_id: id.into(),
            histograms: BTreeMap::from([(Modality::Vision, vec![1.0, 2.0])]),
            gt_category: Some(0),
        }
    }

    #[test]
    fn minimal_corpus_loads() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::new(vec![utt("u0", "o0", 3), utt("u1", "o0", 2)], vec![obj("o0")]).unwrap();
        write_corpus(&c, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.utterances.len(), 2);
        assert_eq!(loaded.objects.len(), 1);
        assert_eq!(loaded, c);
    }

    #[test]
    fn dangling_object_is_rejected() {
        let err = Corpus::new(vec![utt("u0", "obj9", 3)], vec![obj("o0")]).unwrap_err();
        assert!(err.to_string().contains("dangling object reference"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::new(vec![utt("u0", "o0", 3)], vec![obj("o0")]).unwrap();
        write_corpus(&c, dir.path()).unwrap();
        let manifest = dir.path().join("manifest.json");
        let text = fs::read_to_string(&manifest).unwrap().replace("\"o0\"", "\"obj9\"");
        fs::write(&manifest, text).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(err.to_string().contains("dangling object reference"), "{err}");
    }

    #[test]
    fn dimension_mismatch_names_file_and_record() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::new(vec![utt("u0", "o0", 3)], vec![obj("o0")]).unwrap();
        write_corpus(&c, dir.path()).unwrap();
        fs::write(dir.path().join("features/u0.csv"), "1,2\n3\n").unwrap();
        let err = load_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains("u0.csv") && err.contains("u0"), "{err}");
    }

    #[test]
    fn non_finite_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::new(vec![utt("u0", "o0", 2)], vec![obj("o0")]).unwrap();
        write_corpus(&c, dir.path()).unwrap();
        fs::write(dir.path().join("features/u0.csv"), "1,2\nNaN,1\n").unwrap();
        let err = load_corpus(dir.path()).unwrap_err().to_string();
        assert!(err.contains("non-finite"), "{err}");
    }

    #[test]
    fn missing_feature_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::new(vec![utt("u0", "o0", 2)], vec![obj("o0")]).unwrap();
        write_corpus(&c, dir.path()).unwrap();
        fs::remove_file(dir.path().join("features/u0.csv")).unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn object_without_utterances_rejected() {
        assert!(Corpus::new(vec![utt("u0", "o0", 2)], vec![obj("o0"), obj("o1")]).is_err());
    }

    #[test]
    fn frame_labels_single_segment() {
        let c = Corpus::new(vec![utt("u0", "o0", 4)], vec![obj("o0")]).unwrap();
        let seq = WordSequence::new(vec![Segment {
            word: 7,
            start: 0,
            end: 4,
            letters: vec![LetterSpan { letter: 2, duration: 4 }],
        }]);
        let (w, l) = frame_label_matrix(&c, &[seq]).unwrap();
        assert_eq!(w, vec![7, 7, 7, 7]);
        assert_eq!(l, vec![2, 2, 2, 2]);
    }

    #[test]
    fn frame_labels_reject_gaps() {
        let c = Corpus::new(vec![utt("u0", "o0", 4)], vec![obj("o0")]).unwrap();
        let seq = WordSequence::new(vec![Segment {
            word: 0,
            start: 0,
            end: 3,
            letters: vec![],
        }]);
        assert!(matches!(frame_label_matrix(&c, &[seq]), Err(Error::Tiling { .. })));
    }
}
