use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::kernel::plain_sq;

/// Settings for the prototype separation hinge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub use_separation: bool,
    /// Weight of the separation term (lambda).
    pub lambda: f64,
    /// Squared-distance margin below which prototype pairs are penalized.
    pub delta_v: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            use_separation: false,
            lambda: 0.1,
            delta_v: 10.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.delta_v >= 0.0) {
            return Err(Error::Config(format!(
                "lambda and delta_v must be nonnegative (got {}, {})",
                self.lambda, self.delta_v
            )));
        }
        Ok(())
    }
}

/// Mean embedding of each episode class.
pub fn compute_prototypes(embeddings: &[Vec<f64>], labels: &[usize], n_way: usize) -> Result<Vec<Vec<f64>>> {
    if embeddings.len() != labels.len() {
        return Err(Error::Dimension {
            expected: embeddings.len(),
            got: labels.len(),
        });
    }
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; n_way];
    let mut counts = vec![0usize; n_way];
    for (e, &k) in embeddings.iter().zip(labels) {
        if k >= n_way {
            return Err(Error::Episode(format!("label {k} outside {n_way}-way episode")));
        }
        if e.len() != dim {
            return Err(Error::Dimension { expected: dim, got: e.len() });
        }
        counts[k] += 1;
        for (s, v) in sums[k].iter_mut().zip(e) {
            *s += v;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Episode(format!("class {empty} has no support points")));
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= c as f64;
        }
    }
    Ok(sums)
}

/// Row-wise softmax of negative distances, shifted by the row maximum.
pub fn class_probabilities(dists: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = dists.to_owned();
    for mut row in out.rows_mut() {
        let shift = row.iter().fold(f64::NEG_INFINITY, |m, &d| m.max(-d));
        row.mapv_inplace(|d| (-d - shift).exp());
        let total: f64 = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Mean negative log-probability of the true class.
pub fn prototypical_loss(probs: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    labels
        .iter()
        .enumerate()
        .map(|(q, &k)| -probs[[q, k]].ln())
        .sum::<f64>()
        / n as f64
}

/// The same loss computed from distances as softmax cross-entropy in
/// log-sum-exp form.
pub fn prototypical_loss_from_distances(dists: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    dists
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &k)| log_sum_exp_neg(row.iter().copied()) + row[k])
        .sum::<f64>()
        / n as f64
}

/// `log sum exp(-d)` with max shifting.
pub(crate) fn log_sum_exp_neg(ds: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = ds.clone().fold(f64::NEG_INFINITY, |m, d| m.max(-d));
    m + ds.map(|d| (-d - m).exp()).sum::<f64>().ln()
}

/// `lambda * sum_{i != j} max(0, delta_v - |mu_i - mu_j|^2)` over ordered
/// pairs, so each unordered pair contributes twice.
pub fn separation_penalty(prototypes: &[Vec<f64>], config: &LossConfig) -> f64 {
    let mut total = 0.0;
    for (i, a) in prototypes.iter().enumerate() {
        for (j, b) in prototypes.iter().enumerate() {
            if i != j {
                total += (config.delta_v - plain_sq(a, b)).max(0.0);
            }
        }
    }
    config.lambda * total
}
