//! Unsupervised phoneme and word discovery from continuous feature sequences,
//! coupled to multimodal object categorization.
//!
//! The pieces:
//! - [`hdp_hlm`]: the double-articulation word/letter model and its blocked
//!   Gibbs sampler,
//! - [`mlda`]: multimodal LDA over per-object histograms,
//! - [`cooccur`]: the sampling-importance-resampling loop that weights word
//!   segmentation candidates by how well their words predict categories,
//! - [`synth`]: a synthetic corpus with full ground truth,
//! - [`eval`] and [`experiment`]: metrics and experiment runners.

pub mod cooccur;
pub mod corpus;
pub mod dists;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hdp_hlm;
pub mod mlda;
pub mod rng;
pub mod segmentation;
pub mod synth;

pub use corpus::{frame_label_matrix, load_corpus, write_corpus, Corpus, FeatureMatrix, Modality, ObjectRecord, Utterance};
pub use error::{Error, Result};
pub use hdp_hlm::{GlobalParams, HlmHyper, Mode};
pub use mlda::CategoryModel;
pub use segmentation::{LetterSpan, Segment, WordSequence};
