//! Multimodal LDA with a collapsed Gibbs sampler over unit tokens.
//!
//! Each object contributes integer token multiplicities per modality. The
//! sampler keeps the derived counts `N_mko`, `N_kd` and `N_mk` and resamples
//! one token at a time from its collapsed conditional.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Normalizes `hist`, scales it to `modality_weight` total mass and rounds to
/// integer multiplicities with the largest-remainder rule, so the result sums
/// to `round(modality_weight)`. Remainder ties go to the lower bin.
pub fn scale_histogram(hist: &[f64], modality_weight: f64) -> Result<Vec<u32>> {
    if !(modality_weight >= 0.0) || !modality_weight.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "modality weight must be finite and nonnegative, got {modality_weight}"
        )));
    }
    if hist.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("histogram has a negative or non-finite bin".into()));
    }
    let total: f64 = hist.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("histogram is all zero".into()));
    }
    let target = modality_weight.round() as u64;
    let exact: Vec<f64> = hist.iter().map(|h| h / total * modality_weight).collect();
    let mut out: Vec<u32> = exact.iter().map(|x| x.floor() as u32).collect();
    let assigned: u64 = out.iter().map(|&c| c as u64).sum();
    let mut remaining = target.saturating_sub(assigned) as usize;
    if remaining > 0 {
        let mut order: Vec<usize> = (0..hist.len()).collect();
        // Only bins with mass may receive extra tokens.
        order.retain(|&i| hist[i] > 0.0);
        order.sort_by(|&a, &b| {
            let ra = exact[a] - exact[a].floor();
            let rb = exact[b] - exact[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if remaining == 0 {
                break;
            }
            out[i] += 1;
            remaining -= 1;
        }
    }
    Ok(out)
}

/// One modality's input: per-object integer multiplicities over `dim` bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityInput {
    pub name: String,
    /// `counts[d][o]`
    pub counts: Vec<Vec<u32>>,
    pub beta: f64,
}

impl ModalityInput {
    pub fn dim(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MldaConfig {
    pub categories: usize,
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for MldaConfig {
    fn default() -> Self {
        Self {
            categories: 7,
            alpha: 7.1,
            iterations: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub object: usize,
    pub modality: usize,
    pub bin: usize,
}

/// Tokens, their category assignments and the derived counts.
#[derive(Clone, Debug)]
pub struct TokenTable {
    pub tokens: Vec<Token>,
    pub z: Vec<usize>,
    pub k: usize,
    pub alpha: f64,
    pub betas: Vec<f64>,
    pub dims: Vec<usize>,
    pub n_objects: usize,
    /// `n_mko[m][k * dim_m + o]`
    n_mko: Vec<Vec<u32>>,
    /// `n_kd[d * k + k']`
    n_kd: Vec<u32>,
    /// `n_mk[m][k]`
    n_mk: Vec<Vec<u32>>,
}

impl TokenTable {
    /// Expands `inputs` to unit tokens (modality-major, then object, then bin)
    /// with all assignments set to `initial(token_index)`.
    pub fn new(
        inputs: &[ModalityInput],
        k: usize,
        alpha: f64,
        mut initial: impl FnMut(usize) -> usize,
    ) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidArgument("MLDA needs at least one category".into()));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        let n_objects = inputs.first().map_or(0, |m| m.counts.len());
        if inputs.iter().any(|m| m.counts.len() != n_objects) {
            return Err(Error::InvalidArgument("modalities disagree on object count".into()));
        }
        let mut tokens = Vec::new();
        for (m, input) in inputs.iter().enumerate() {
            if !(input.beta > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "beta of modality {} must be positive",
                    input.name
                )));
            }
            let dim = input.dim();
            for (d, row) in input.counts.iter().enumerate() {
                if row.len() != dim {
                    return Err(Error::InvalidArgument(format!(
                        "modality {}: object {d} has {} bins, expected {dim}",
                        input.name,
                        row.len()
                    )));
                }
                for (o, &c) in row.iter().enumerate() {
                    for _ in 0..c {
                        tokens.push(Token {
                            object: d,
                            modality: m,
                            bin: o,
                        });
                    }
                }
            }
        }
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty token set".into()));
        }
        let dims: Vec<usize> = inputs.iter().map(ModalityInput::dim).collect();
        let mut table = Self {
            z: Vec::with_capacity(tokens.len()),
            k,
            alpha,
            betas: inputs.iter().map(|m| m.beta).collect(),
            n_mko: dims.iter().map(|&dim| vec![0; k * dim]).collect(),
            n_kd: vec![0; n_objects * k],
            n_mk: vec![vec![0; k]; inputs.len()],
            dims,
            n_objects,
            tokens,
        };
        for i in 0..table.tokens.len() {
            let c = initial(i);
            assert!(c < k, "initial assignment {c} out of range");
            table.z.push(c);
            table.add(i, c);
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn add(&mut self, i: usize, c: usize) {
        let t = self.tokens[i];
        self.n_mko[t.modality][c * self.dims[t.modality] + t.bin] += 1;
        self.n_kd[t.object * self.k + c] += 1;
        self.n_mk[t.modality][c] += 1;
    }

    fn remove(&mut self, i: usize) {
        let t = self.tokens[i];
        let c = self.z[i];
        self.n_mko[t.modality][c * self.dims[t.modality] + t.bin] -= 1;
        self.n_kd[t.object * self.k + c] -= 1;
        self.n_mk[t.modality][c] -= 1;
    }

    pub fn n_mko(&self, m: usize, k: usize, o: usize) -> u32 {
        self.n_mko[m][k * self.dims[m] + o]
    }

    pub fn n_kd(&self, k: usize, d: usize) -> u32 {
        self.n_kd[d * self.k + k]
    }

    pub fn n_mk(&self, m: usize, k: usize) -> u32 {
        self.n_mk[m][k]
    }

    /// Unnormalized collapsed conditional of token `i`, assuming the token
    /// has already been removed from the counts.
    fn weights_without(&self, i: usize, out: &mut [f64]) {
        let t = self.tokens[i];
        let dim = self.dims[t.modality];
        let beta = self.betas[t.modality];
        let nko = &self.n_mko[t.modality];
        let nk = &self.n_mk[t.modality];
        let nkd = &self.n_kd[t.object * self.k..(t.object + 1) * self.k];
        for (c, w) in out.iter_mut().enumerate() {
            *w = (nkd[c] as f64 + self.alpha) * (nko[c * dim + t.bin] as f64 + beta)
                / (nk[c] as f64 + dim as f64 * beta);
        }
    }

    /// Normalized conditional `P(z_i = k | z_{-i})`.
    pub fn conditional(&mut self, i: usize) -> Vec<f64> {
        self.remove(i);
        let mut w = vec![0.0; self.k];
        self.weights_without(i, &mut w);
        self.add(i, self.z[i]);
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    }

    /// Recomputes every derived count from `z` and compares.
    pub fn counts_consistent(&self) -> bool {
        let mut fresh = self.clone();
        fresh.n_mko.iter_mut().for_each(|v| v.fill(0));
        fresh.n_kd.fill(0);
        fresh.n_mk.iter_mut().for_each(|v| v.fill(0));
        for i in 0..self.tokens.len() {
            fresh.add(i, self.z[i]);
        }
        fresh.n_mko == self.n_mko && fresh.n_kd == self.n_kd && fresh.n_mk == self.n_mk
    }

    pub fn object_totals(&self) -> Vec<u32> {
        let mut out = vec![0; self.n_objects];
        for t in &self.tokens {
            out[t.object] += 1;
        }
        out
    }

    /// Point estimates of θ and π from the current counts.
    pub fn category_model(&self, names: &[String]) -> CategoryModel {
        let theta = (0..self.dims.len())
            .map(|m| {
                let dim = self.dims[m];
                let beta = self.betas[m];
                (0..self.k)
                    .map(|c| {
                        let denom = self.n_mk[m][c] as f64 + dim as f64 * beta;
                        (0..dim)
                            .map(|o| (self.n_mko(m, c, o) as f64 + beta) / denom)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let pi = (0..self.n_objects)
            .map(|d| {
                let row = &self.n_kd[d * self.k..(d + 1) * self.k];
                let total: u32 = row.iter().sum();
                let denom = total as f64 + self.k as f64 * self.alpha;
                row.iter().map(|&n| (n as f64 + self.alpha) / denom).collect()
            })
            .collect();
        CategoryModel {
            modalities: names.to_vec(),
            theta,
            pi,
        }
    }
}

/// Resamples the category of token `i` following the cumulative scan of the
/// collapsed Gibbs sampler and returns it.
pub fn gibbs_assign<R: Rng + ?Sized>(table: &mut TokenTable, i: usize, rng: &mut R, scratch: &mut Vec<f64>) -> usize {
    table.remove(i);
    scratch.resize(table.k, 0.0);
    table.weights_without(i, scratch);
    for c in 1..table.k {
        scratch[c] += scratch[c - 1];
    }
    let u: f64 = rng.random::<f64>() * scratch[table.k - 1];
    let c = scratch.iter().position(|&p| u < p).unwrap_or(table.k - 1);
    table.z[i] = c;
    table.add(i, c);
    c
}

/// θ per modality (`theta[m][k][o]`, category-major) and π (`pi[d][k]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryModel {
    pub modalities: Vec<String>,
    pub theta: Vec<Vec<Vec<f64>>>,
    pub pi: Vec<Vec<f64>>,
}

impl CategoryModel {
    pub fn n_categories(&self) -> usize {
        self.pi.first().map_or(0, Vec::len)
    }

    pub fn modality(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m == name)
    }

    /// Most probable category per object; ties go to the lowest index.
    pub fn object_categories(&self) -> Vec<usize> {
        self.pi
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best })
                    .0
            })
            .collect()
    }
}

/// A sequential-scan collapsed Gibbs sampler.
pub struct MldaSampler<R: Rng> {
    table: TokenTable,
    names: Vec<String>,
    rng: R,
    scratch: Vec<f64>,
}

impl<R: Rng> MldaSampler<R> {
    /// Initializes every token to a uniformly random category.
    pub fn new(inputs: &[ModalityInput], k: usize, alpha: f64, mut rng: R) -> Result<Self> {
        if k < 1 {
            return Err(Error::InvalidArgument("MLDA needs at least one category".into()));
        }
        let table = TokenTable::new(inputs, k, alpha, |_| rng.random_range(0..k))?;
        Ok(Self {
            table,
            names: inputs.iter().map(|m| m.name.clone()).collect(),
            rng,
            scratch: Vec::new(),
        })
    }

    pub fn sweep(&mut self) {
        for i in 0..self.table.len() {
            gibbs_assign(&mut self.table, i, &mut self.rng, &mut self.scratch);
        }
    }

    pub fn table(&self) -> &TokenTable {
        &self.table
    }

    pub fn category_model(&self) -> CategoryModel {
        self.table.category_model(&self.names)
    }
}

/// Runs `config.iterations` full sweeps and returns θ and π from the final
/// counts. Deterministic in `seed`.
pub fn run_mlda(inputs: &[ModalityInput], config: &MldaConfig, seed: u64) -> Result<CategoryModel> {
    if config.categories < 1 {
        return Err(Error::InvalidArgument("MLDA needs at least one category".into()));
    }
    if config.iterations < 1 {
        return Err(Error::InvalidArgument("MLDA needs at least one sweep".into()));
    }
    let mut sampler = MldaSampler::new(inputs, config.categories, config.alpha, rng::stream(seed, &[rng::tag::MLDA]))?;
    for _ in 0..config.iterations {
        sampler.sweep();
    }
    Ok(sampler.category_model())
}
