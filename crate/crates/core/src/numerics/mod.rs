//! Shared numeric kernels: dense matrices, seeded RNG streams, Adam, and the
//! handful of math functions used across the pipeline.

mod adam;
mod matrix;
mod rng;

pub use adam::AdamState;
pub use matrix::{dot, euclidean_distance, RealMatrix};
pub use rng::SeededRng;

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shift-by-max softmax. Errors on an empty or non-finite input.
pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("softmax input must be finite"));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Indices of the `k` largest entries in each column, ordered by value
/// descending with ties broken by lower row index.
pub fn topk_indices_per_column(m: &RealMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > m.rows() {
        return Err(Error::invalid(format!(
            "top-k needs 1 <= k <= {}, got {k}",
            m.rows()
        )));
    }
    let mut out = Vec::with_capacity(m.cols());
    for c in 0..m.cols() {
        let mut order: Vec<usize> = (0..m.rows()).collect();
        order.sort_by(|&a, &b| {
            m[(b, c)]
                .partial_cmp(&m[(a, c)])
                .unwrap()
                .then(a.cmp(&b))
        });
        order.truncate(k);
        out.push(order);
    }
    Ok(out)
}

/// Mean of the `k` largest entries in each column.
pub fn topk_mean_per_column(m: &RealMatrix, k: usize) -> Result<Vec<f64>> {
    let idx = topk_indices_per_column(m, k)?;
    Ok(idx
        .iter()
        .enumerate()
        .map(|(c, rows)| rows.iter().map(|&r| m[(r, c)]).sum::<f64>() / k as f64)
        .collect())
}

/// Row-wise L2 normalization; all-zero rows pass through unchanged.
pub fn l2_normalize_rows(m: &RealMatrix) -> RealMatrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let norm = dot(m.row(r), m.row(r)).sqrt();
        if norm > 0.0 {
            for v in out.row_mut(r) {
                *v /= norm;
            }
        }
    }
    out
}

/// Ranks `0..n` by ascending `key` with ties broken by lower index.
pub fn argsort_ascending(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).unwrap().then(a.cmp(&b)));
    order
}
