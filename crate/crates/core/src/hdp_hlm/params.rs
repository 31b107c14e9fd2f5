use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dists::{self, LN_2PI};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Words are letter strings (the full two-level model).
    DoubleArticulation,
    /// Every word is a single letter; the model degenerates to an HSMM.
    FlatHsmm,
}

/// Where the spellings of words that own no segment come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpellingSource {
    /// Fresh draws from the word model's letter chain.
    Prior,
    /// Random substrings of the current letter alignments, so that proposed
    /// words are letter strings the corpus actually contains.
    Alignments,
}

/// Hyperparameters of the hierarchical language model, independent of the
/// feature dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HlmHyper {
    pub n_letters: usize,
    pub n_words: usize,
    pub alpha_lm: f64,
    pub gamma_lm: f64,
    pub alpha_wm: f64,
    pub gamma_wm: f64,
    /// Every coordinate of the NIW prior mean.
    pub niw_mean: f64,
    /// The NIW scale matrix is `niw_scale * I`.
    pub niw_scale: f64,
    pub niw_kappa: f64,
    /// ν₀ = F + `niw_dof_offset`.
    pub niw_dof_offset: f64,
    pub dur_shape: f64,
    pub dur_rate: f64,
    pub max_letter_duration: usize,
    pub mean_word_letters: f64,
    pub max_word_letters: usize,
    pub max_utterance_len: usize,
    pub mode: Mode,
    pub unused_spellings: SpellingSource,
}

impl Default for HlmHyper {
    fn default() -> Self {
        Self {
            n_letters: 50,
            n_words: 50,
            alpha_lm: 10.0,
            gamma_lm: 10.0,
            alpha_wm: 10.0,
            gamma_wm: 10.0,
            niw_mean: 0.0,
            niw_scale: 1.0,
            niw_kappa: 0.01,
            niw_dof_offset: 5.0,
            dur_shape: 200.0,
            dur_rate: 10.0,
            max_letter_duration: 40,
            mean_word_letters: 3.0,
            max_word_letters: 8,
            max_utterance_len: 2000,
            mode: Mode::DoubleArticulation,
            unused_spellings: SpellingSource::Prior,
        }
    }
}

impl HlmHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_letters < 1 || self.n_words < 1 {
            return bad("truncations must be at least 1");
        }
        if self.mode == Mode::FlatHsmm && self.n_letters != self.n_words {
            return bad("flat-hsmm mode needs as many letters as words");
        }
        for (name, v) in [
            ("alpha_lm", self.alpha_lm),
            ("gamma_lm", self.gamma_lm),
            ("alpha_wm", self.alpha_wm),
            ("gamma_wm", self.gamma_wm),
            ("niw_scale", self.niw_scale),
            ("niw_kappa", self.niw_kappa),
            ("dur_shape", self.dur_shape),
            ("dur_rate", self.dur_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.niw_dof_offset > -1.0) {
            return bad("NIW degrees of freedom must exceed F - 1");
        }
        if self.max_letter_duration < 1 || self.max_word_letters < 1 {
            return bad("duration and spelling caps must be at least 1");
        }
        if !(self.mean_word_letters >= 1.0) {
            return bad("mean word length must be at least 1 letter");
        }
        Ok(())
    }

    pub fn niw_prior(&self, dim: usize) -> NiwPrior {
        NiwPrior {
            mean: vec![self.niw_mean; dim],
            kappa: self.niw_kappa,
            dof: dim as f64 + self.niw_dof_offset,
            scale: DMatrix::identity(dim, dim) * self.niw_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NiwPrior {
    pub mean: Vec<f64>,
    pub kappa: f64,
    pub dof: f64,
    pub scale: DMatrix<f64>,
}

/// Sufficient statistics of a set of frames.
#[derive(Clone, Debug)]
pub struct GaussStats {
    pub n: usize,
    pub sum: DVector<f64>,
    pub outer: DMatrix<f64>,
}

impl GaussStats {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            sum: DVector::zeros(dim),
            outer: DMatrix::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        let v = DVector::from_column_slice(x);
        self.n += 1;
        self.outer += &v * v.transpose();
        self.sum += v;
    }
}

impl NiwPrior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Conjugate posterior given frame statistics.
    pub fn posterior(&self, stats: &GaussStats) -> NiwPrior {
        if stats.n == 0 {
            return self.clone();
        }
        let n = stats.n as f64;
        let mu0 = DVector::from_column_slice(&self.mean);
        let xbar = &stats.sum / n;
        let scatter = &stats.outer - &xbar * xbar.transpose() * n;
        let kappa = self.kappa + n;
        let mean = (&mu0 * self.kappa + &stats.sum) / kappa;
        let diff = &xbar - &mu0;
        let scale = &self.scale + scatter + &diff * diff.transpose() * (self.kappa * n / kappa);
        NiwPrior {
            mean: mean.iter().copied().collect(),
            kappa,
            dof: self.dof + n,
            scale: (&scale + scale.transpose()) * 0.5,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Gaussian {
        let cov = dists::inverse_wishart(&self.scale, self.dof, rng);
        let chol = dists::robust_cholesky(&(&cov / self.kappa));
        let z = dists::standard_normal_vec(self.dim(), rng);
        let mean = DVector::from_column_slice(&self.mean) + chol.l() * z;
        Gaussian::new(mean.iter().copied().collect(), cov)
    }
}

/// Multivariate normal with a cached whitening factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "GaussianRepr", into = "GaussianRepr")]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    /// Row-major inverse of the Cholesky factor (lower triangular).
    whiten: Vec<f64>,
    log_norm: f64,
}

#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl From<GaussianRepr> for Gaussian {
    fn from(r: GaussianRepr) -> Self {
        let n = r.mean.len();
        let cov = DMatrix::from_fn(n, n, |i, j| r.cov[i][j]);
        Gaussian::new(r.mean, cov)
    }
}

impl From<Gaussian> for GaussianRepr {
    fn from(g: Gaussian) -> Self {
        let n = g.mean.len();
        GaussianRepr {
            cov: (0..n).map(|i| (0..n).map(|j| g.cov[(i, j)]).collect()).collect(),
            mean: g.mean,
        }
    }
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Self {
        let f = mean.len();
        let chol = dists::robust_cholesky(&cov);
        let l = chol.l();
        let log_det: f64 = 2.0 * (0..f).map(|i| l[(i, i)].ln()).sum::<f64>();
        let linv = l.try_inverse().expect("Cholesky factor is invertible");
        let whiten = (0..f).flat_map(|i| (0..f).map(move |j| (i, j))).map(|(i, j)| linv[(i, j)]).collect();
        Self {
            mean,
            cov,
            whiten,
            log_norm: -0.5 * (f as f64 * LN_2PI + log_det),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let f = self.mean.len();
        let mut q = 0.0;
        for i in 0..f {
            let row = &self.whiten[i * f..i * f + i + 1];
            let mut s = 0.0;
            for (j, w) in row.iter().enumerate() {
                s += w * (x[j] - self.mean[j]);
            }
            q += s * s;
        }
        self.log_norm - 0.5 * q
    }
}

/// Per-letter Gaussians and truncated-Poisson durations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcousticModel {
    pub emissions: Vec<Gaussian>,
    pub duration_rates: Vec<f64>,
    pub max_letter_duration: usize,
    /// `duration_log_pmf[j][d]` for `d` in `0..=max`; entry 0 is `-inf`.
    #[serde(skip)]
    duration_log_pmf: Vec<Vec<f64>>,
}

impl AcousticModel {
    pub fn new(emissions: Vec<Gaussian>, duration_rates: Vec<f64>, max_letter_duration: usize) -> Self {
        let mut am = Self {
            emissions,
            duration_rates,
            max_letter_duration,
            duration_log_pmf: Vec::new(),
        };
        am.refresh();
        am
    }

    /// Rebuilds the cached duration tables (needed after deserializing).
    pub fn refresh(&mut self) {
        self.duration_log_pmf = self
            .duration_rates
            .iter()
            .map(|&r| dists::truncated_poisson_table(r, self.max_letter_duration))
            .collect();
    }

    pub fn n_letters(&self) -> usize {
        self.emissions.len()
    }

    pub fn dim(&self) -> usize {
        self.emissions.first().map_or(0, |g| g.mean().len())
    }

    #[inline]
    pub fn duration_log_pmf(&self, letter: usize, d: usize) -> f64 {
        self.duration_log_pmf[letter].get(d).copied().unwrap_or(f64::NEG_INFINITY)
    }
}

/// Word spellings plus the letter bigram they are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordModel {
    pub spellings: Vec<Vec<usize>>,
    /// `(J + 1) x J`; the last row is the word-initial distribution.
    pub letter_bigram: Vec<Vec<f64>>,
    pub base: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
}

impl WordModel {
    pub fn start_row(&self) -> usize {
        self.letter_bigram.len() - 1
    }

    pub fn max_spelling_len(&self) -> usize {
        self.spellings.iter().map(Vec::len).max().unwrap_or(1)
    }
}

/// Word bigram; the last row is the sentence-initial distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageModel {
    pub bigram: Vec<Vec<f64>>,
    pub base: Vec<f64>,
    pub alpha: f64,
    pub gamma: f64,
}

impl LanguageModel {
    pub fn start_row(&self) -> usize {
        self.bigram.len() - 1
    }

    pub fn n_words(&self) -> usize {
        self.base.len()
    }

    pub fn log_bigram(&self) -> Vec<Vec<f64>> {
        self.bigram.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub am: AcousticModel,
    pub wm: WordModel,
    pub lm: LanguageModel,
    pub mode: Mode,
}

impl GlobalParams {
    /// Parameters with given acoustics, spellings and word bigram
    /// (`(V + 1) x V`, start row last); the letter chain and bases are
    /// uniform. Used to freeze a model for exact inference checks.
    pub fn fixed(am: AcousticModel, spellings: Vec<Vec<usize>>, word_bigram: Vec<Vec<f64>>) -> Self {
        let j = am.n_letters();
        let v = spellings.len();
        GlobalParams {
            am,
            wm: WordModel {
                spellings,
                letter_bigram: vec![vec![1.0 / j as f64; j]; j + 1],
                base: vec![1.0 / j as f64; j],
                alpha: 10.0,
                gamma: 10.0,
            },
            lm: LanguageModel {
                bigram: word_bigram,
                base: vec![1.0 / v as f64; v],
                alpha: 10.0,
                gamma: 10.0,
            },
            mode: Mode::DoubleArticulation,
        }
    }

    pub fn n_words(&self) -> usize {
        self.wm.spellings.len()
    }

    pub fn n_letters(&self) -> usize {
        self.am.n_letters()
    }

    /// Longest admissible word segment under the current spellings.
    pub fn max_word_span(&self) -> usize {
        self.am.max_letter_duration * self.wm.max_spelling_len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        let mut p: GlobalParams = serde_json::from_str(text)?;
        p.am.refresh();
        Ok(p)
    }

    /// Checks the type invariants: stochastic rows, spelling ranges and the
    /// flat-mode shape.
    pub fn check(&self) -> std::result::Result<(), String> {
        let j = self.n_letters();
        let rows_ok = |rows: &[Vec<f64>]| {
            rows.iter()
                .all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9 && r.iter().all(|p| *p >= 0.0))
        };
        if !rows_ok(&self.lm.bigram) || !rows_ok(std::slice::from_ref(&self.lm.base)) {
            return Err("language model rows are not stochastic".into());
        }
        if !rows_ok(&self.wm.letter_bigram) || !rows_ok(std::slice::from_ref(&self.wm.base)) {
            return Err("word model rows are not stochastic".into());
        }
        if self.wm.spellings.iter().any(|s| s.is_empty() || s.iter().any(|&l| l >= j)) {
            return Err("spelling out of range".into());
        }
        if self.am.duration_rates.iter().any(|r| !(*r > 0.0)) {
            return Err("non-positive duration rate".into());
        }
        if self.mode == Mode::FlatHsmm
            && (j != self.n_words() || self.wm.spellings.iter().enumerate().any(|(i, s)| s != &vec![i]))
        {
            return Err("flat-hsmm spellings must be the identity".into());
        }
        Ok(())
    }
}
