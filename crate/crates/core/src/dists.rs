//! Sampling and density helpers shared by the samplers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Draws an index with probability proportional to `exp(log_weights)`.
/// Returns `None` when every weight is zero.
pub fn sample_log_categorical<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Option<usize> {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m.is_nan() {
        return None;
    }
    let total: f64 = log_weights.iter().map(|w| (w - m).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, w) in log_weights.iter().enumerate() {
        let p = (w - m).exp();
        if p > 0.0 {
            last = Some(i);
            if u < p {
                return Some(i);
            }
            u -= p;
        }
    }
    last
}

/// Draws an index with probability proportional to `weights`.
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = Some(i);
            if u < w {
                return Some(i);
            }
            u -= w;
        }
    }
    last
}

/// Log of a Gamma(shape, 1) draw. Stable for tiny shapes, where the draw
/// itself underflows.
pub fn ln_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("valid gamma").sample(rng).ln()
    } else {
        let boosted = Gamma::new(shape + 1.0, 1.0).expect("valid gamma").sample(rng).ln();
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        boosted + u.ln() / shape
    }
}

/// Gamma(shape, rate) draw.
pub fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    ln_gamma_draw(shape, rng).exp() / rate
}

/// Dirichlet draw computed in log space, then normalized.
pub fn dirichlet<R: Rng + ?Sized>(alphas: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = alphas.iter().map(|&a| ln_gamma_draw(a, rng)).collect();
    let z = logsumexp(&logs);
    let mut p: Vec<f64> = logs.iter().map(|l| (l - z).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

pub fn ln_poisson(d: usize, rate: f64) -> f64 {
    d as f64 * rate.ln() - rate - ln_gamma(d as f64 + 1.0)
}

/// Log PMF of a Poisson restricted to `1..=max` and renormalized; entry 0 is
/// `-inf`.
pub fn truncated_poisson_table(rate: f64, max: usize) -> Vec<f64> {
    let mut table = vec![f64::NEG_INFINITY; max + 1];
    for (d, slot) in table.iter_mut().enumerate().skip(1) {
        *slot = ln_poisson(d, rate);
    }
    let z = logsumexp(&table[1..]);
    for slot in table.iter_mut().skip(1) {
        *slot -= z;
    }
    table
}

/// Cholesky factor of a symmetric matrix, adding `1e-8 * trace / F` to the
/// diagonal until factorization succeeds.
pub fn robust_cholesky(m: &DMatrix<f64>) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(c) = sym.clone().cholesky() {
        return c;
    }
    let f = sym.nrows() as f64;
    let mut jitter = (1e-8 * sym.trace().abs() / f).max(1e-12);
    loop {
        let mut j = sym.clone();
        for i in 0..j.nrows() {
            j[(i, i)] += jitter;
        }
        if let Some(c) = j.cholesky() {
            return c;
        }
        jitter *= 10.0;
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Inverse-Wishart(scale, dof) draw via the Bartlett decomposition of the
/// matching Wishart(scale^-1, dof).
pub fn inverse_wishart<R: Rng + ?Sized>(scale: &DMatrix<f64>, dof: f64, rng: &mut R) -> DMatrix<f64> {
    let p = scale.nrows();
    let scale_inv = robust_cholesky(scale).inverse();
    let l = robust_cholesky(&scale_inv).l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi2 = 2.0 * gamma_draw((dof - i as f64) / 2.0, 1.0, rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let la = l * a;
    let wishart = &la * la.transpose();
    let sigma = robust_cholesky(&wishart).inverse();
    (&sigma + sigma.transpose()) * 0.5
}
