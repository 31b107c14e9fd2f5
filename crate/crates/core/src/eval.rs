//! Clustering agreement metrics: NMI, ARI and ACC.
//!
//! Labels are arbitrary integers; only the induced partitions matter.

use std::collections::HashMap;

use pathfinding::prelude::{kuhn_munkres, Matrix};

use crate::error::{Error, Result};

/// Contingency table between two labelings, with row (predicted) and column
/// (truth) marginals.
struct Contingency {
    table: Vec<Vec<u64>>,
    rows: Vec<u64>,
    cols: Vec<u64>,
    n: u64,
}

fn relabel(labels: &[i64]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let ids = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    (ids, map.len())
}

fn contingency(predicted: &[i64], truth: &[i64]) -> Result<Contingency> {
    if predicted.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "label length mismatch: {} predicted vs {} truth",
            predicted.len(),
            truth.len()
        )));
    }
    let (p, kp) = relabel(predicted);
    let (t, kt) = relabel(truth);
    let mut table = vec![vec![0u64; kt]; kp];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..kt).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok(Contingency {
        table,
        rows,
        cols,
        n: predicted.len() as u64,
    })
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with the arithmetic-mean normalizer
/// `(H(U) + H(V)) / 2`, natural logs. Two trivial partitions score 1.
pub fn nmi(predicted: &[i64], truth: &[i64]) -> Result<f64> {
    let c = contingency(predicted, truth)?;
    if c.n == 0 {
        return Err(Error::InvalidArgument("NMI needs at least one label".into()));
    }
    let n = c.n as f64;
    let hu = entropy(&c.rows, n);
    let hv = entropy(&c.cols, n);
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &nij) in row.iter().enumerate() {
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (c.rows[i] as f64 * c.cols[j] as f64)).ln();
            }
        }
    }
    let norm = (hu + hv) / 2.0;
    if norm == 0.0 {
        return Ok(1.0);
    }
    Ok((mi / norm).clamp(0.0, 1.0))
}

/// Hubert-Arabie adjusted Rand index. When both partitions are trivial in
/// the same way (expected index equals the maximum) the score is 1.
pub fn ari(predicted: &[i64], truth: &[i64]) -> Result<f64> {
    let c = contingency(predicted, truth)?;
    if c.n < 2 {
        return Err(Error::InvalidArgument("ARI needs at least two labels".into()));
    }
    // Exact integer pair counts: with N = C(n,2), ARI is
    // 2 (N index - a b) / (N (a + b) - 2 a b), one rounding at the end.
    let pairs = |x: &u64| -> i128 {
        let x = *x as i128;
        x * (x - 1) / 2
    };
    let index: i128 = c.table.iter().flatten().map(pairs).sum();
    let a: i128 = c.rows.iter().map(pairs).sum();
    let b: i128 = c.cols.iter().map(pairs).sum();
    let total = pairs(&c.n);
    let num = 2 * (total * index - a * b);
    let den = total * (a + b) - 2 * a * b;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

/// Accuracy under the best one-to-one matching of predicted to true
/// clusters (exact rectangular assignment); unmatched clusters score 0.
pub fn acc(predicted: &[i64], truth: &[i64]) -> Result<f64> {
    let c = contingency(predicted, truth)?;
    if c.n == 0 {
        return Err(Error::InvalidArgument("ACC needs at least one label".into()));
    }
    let kp = c.table.len();
    let kt = c.cols.len();
    // kuhn_munkres wants rows <= columns.
    let weights = if kp <= kt {
        Matrix::from_fn(kp, kt, |(i, j)| c.table[i][j] as i64)
    } else {
        Matrix::from_fn(kt, kp, |(j, i)| c.table[i][j] as i64)
    };
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / c.n as f64)
}

/// Best matching found by trying every injective relabeling. Exponential;
/// for cross-checking [`acc`] on small cluster counts.
pub fn acc_brute_force(predicted: &[i64], truth: &[i64]) -> Result<f64> {
    let c = contingency(predicted, truth)?;
    let kt = c.cols.len();
    fn search(row: usize, used: &mut Vec<bool>, table: &[Vec<u64>], kt: usize) -> u64 {
        if row == table.len() {
            return 0;
        }
        // leaving this predicted cluster unmatched
        let mut best = search(row + 1, used, table, kt);
        for j in 0..kt {
            if !used[j] {
                used[j] = true;
                best = best.max(table[row][j] + search(row + 1, used, table, kt));
                used[j] = false;
            }
        }
        best
    }
    let best = search(0, &mut vec![false; kt], &c.table, kt);
    Ok(best as f64 / c.n as f64)
}

/// Metrics restricted to the positions where `mask` is set.
pub fn restrict(predicted: &[i64], truth: &[i64], mask: &[bool]) -> (Vec<i64>, Vec<i64>) {
    predicted
        .iter()
        .zip(truth)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &t), _)| (p, t))
        .unzip()
}
