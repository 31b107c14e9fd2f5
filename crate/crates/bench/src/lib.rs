//! Shared fixtures for the benchmarks.

use daa_core::cooccur::RunConfig;
use daa_core::experiment::{self, preset, Dataset};
use daa_core::mlda::ModalityInput;
use daa_core::{hdp_hlm, GlobalParams, HlmHyper};

/// The default synthetic dataset with the fast preset's model settings.
pub struct Fixture {
    pub data: Dataset,
    pub hyper: HlmHyper,
    pub run: RunConfig,
}

impl Fixture {
    pub fn new() -> Self {
        let config = preset("desk-fast").expect("built-in preset");
        Self {
            data: experiment::default_dataset().expect("default corpus generates"),
            hyper: config.hyper,
            run: config.run,
        }
    }

    pub fn params(&self, seed: u64) -> GlobalParams {
        hdp_hlm::init_params(&self.hyper, &self.data.corpus, seed).expect("valid preset")
    }

    /// MLDA inputs for the segmentation drawn from freshly initialized
    /// parameters.
    pub fn mlda_inputs(&self) -> Vec<ModalityInput> {
        let params = self.params(0);
        let seqs = hdp_hlm::sample_all(&self.data.corpus, &params, &self.hyper, 1).expect("sampling succeeds");
        let bow = daa_core::cooccur::bag_of_words(&seqs, &self.data.corpus, params.n_words());
        daa_core::cooccur::mlda_inputs(&self.data.corpus, &bow, 200.0, &self.run).expect("valid inputs")
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
