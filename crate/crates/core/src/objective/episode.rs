//! Episode loss and its reverse-mode gradient.
//!
//! Forward chain: patches -> embeddings -> prototypes -> kernel distances ->
//! softmax cross-entropy (+ separation hinge). The backward pass walks the
//! same chain in reverse; support points receive gradient through the
//! prototype mean.

use ndarray::Array2;

use crate::corpus::{Episode, EpisodeItem};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};

use super::kernel::{plain_sq, rbf_distance, DistanceKernel};
use super::loss::{
    class_probabilities, compute_prototypes, prototypical_loss_from_distances, separation_penalty, LossConfig,
};

/// Parameter gradients of an episode loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Shaped like the embedding weights `A`.
    pub d_weights: Array2<f64>,
    /// Shaped like `L`; present only for the Cholesky kernel. Diagonal and
    /// strict upper entries are always zero.
    pub d_cholesky: Option<Array2<f64>>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(|v| v.is_finite())
            && self.d_cholesky.as_ref().map_or(true, |d| d.iter().all(|v| v.is_finite()))
    }
}

fn stack(items: &[EpisodeItem], in_dim: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((items.len(), in_dim));
    for (mut row, item) in out.rows_mut().into_iter().zip(items) {
        if item.features.len() != in_dim {
            return Err(Error::Dimension {
                expected: in_dim,
                got: item.features.len(),
            });
        }
        row.assign(&ndarray::ArrayView1::from(&item.features[..]));
    }
    Ok(out)
}

fn rows_to_vecs(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Everything the backward pass needs from the forward pass.
struct Forward {
    xs: Array2<f64>,
    xq: Array2<f64>,
    es: Array2<f64>,
    eq: Array2<f64>,
    protos: Array2<f64>,
    counts: Vec<usize>,
    /// Query embeddings and prototypes in the space where distances are
    /// plain Euclidean (`E L` for the Cholesky kernel).
    uq: Array2<f64>,
    uc: Array2<f64>,
    sq: Array2<f64>,
    dists: Array2<f64>,
    support_labels: Vec<usize>,
    query_labels: Vec<usize>,
}

fn forward(model: &EmbeddingModel, kernel: &DistanceKernel, episode: &Episode) -> Result<Forward> {
    let n_way = episode.n_way();
    if n_way < 2 {
        return Err(Error::Episode(format!("episode must have at least 2 classes, got {n_way}")));
    }
    if episode.query.is_empty() {
        return Err(Error::Episode("episode has no query points".into()));
    }
    kernel.validate(model.out_dim())?;
    let in_dim = model.in_dim();
    let xs = stack(&episode.support, in_dim)?;
    let xq = stack(&episode.query, in_dim)?;
    let es = model.embed_rows(xs.view())?;
    let eq = model.embed_rows(xq.view())?;
    let support_labels: Vec<usize> = episode.support.iter().map(|i| i.label).collect();
    let query_labels: Vec<usize> = episode.query.iter().map(|i| i.label).collect();
    if let Some(&bad) = query_labels.iter().find(|&&k| k >= n_way) {
        return Err(Error::Episode(format!("query label {bad} outside {n_way}-way episode")));
    }

    let proto_vecs = compute_prototypes(&rows_to_vecs(&es), &support_labels, n_way)?;
    let out_dim = model.out_dim();
    let protos = Array2::from_shape_fn((n_way, out_dim), |(k, d)| proto_vecs[k][d]);
    let mut counts = vec![0usize; n_way];
    for &k in &support_labels {
        counts[k] += 1;
    }

    let (uq, uc) = match kernel {
        DistanceKernel::Cholesky { l } => (eq.dot(l), protos.dot(l)),
        _ => (eq.clone(), protos.clone()),
    };
    let n_q = uq.nrows();
    let mut sq = Array2::zeros((n_q, n_way));
    for q in 0..n_q {
        let a = uq.row(q);
        for k in 0..n_way {
            sq[[q, k]] = plain_sq(a.as_slice().expect("row-major"), uc.row(k).as_slice().expect("row-major"));
        }
    }
    let dists = match kernel {
        DistanceKernel::Rbf { gamma } => sq.mapv(|s| rbf_distance(*gamma, s)),
        _ => sq.clone(),
    };
    if dists.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numerical("non-finite query-prototype distance".into()));
    }

    Ok(Forward {
        xs,
        xq,
        es,
        eq,
        protos,
        counts,
        uq,
        uc,
        sq,
        dists,
        support_labels,
        query_labels,
    })
}

fn loss_from(fwd: &Forward, config: &LossConfig) -> f64 {
    let mut loss = prototypical_loss_from_distances(fwd.dists.view(), &fwd.query_labels);
    if config.use_separation {
        loss += separation_penalty(&rows_to_vecs(&fwd.protos), config);
    }
    loss
}

/// Prototypical loss of one episode, plus the separation hinge when enabled.
pub fn episode_loss(
    model: &EmbeddingModel,
    kernel: &DistanceKernel,
    episode: &Episode,
    config: &LossConfig,
) -> Result<f64> {
    config.validate()?;
    let loss = loss_from(&forward(model, kernel, episode)?, config);
    if !loss.is_finite() {
        return Err(Error::Numerical("episode loss is not finite".into()));
    }
    Ok(loss)
}

/// Query-to-prototype distance matrix `(n_query, n_way)` of an episode.
pub fn episode_distances(model: &EmbeddingModel, kernel: &DistanceKernel, episode: &Episode) -> Result<Array2<f64>> {
    Ok(forward(model, kernel, episode)?.dists)
}

/// Nearest-prototype class for each query point (lowest index on ties).
pub fn episode_predictions(model: &EmbeddingModel, kernel: &DistanceKernel, episode: &Episode) -> Result<Vec<usize>> {
    let d = episode_distances(model, kernel, episode)?;
    Ok(d.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::INFINITY), |best, (k, &v)| if v < best.1 { (k, v) } else { best })
                .0
        })
        .collect())
}

/// Loss and analytic gradients with respect to `A` (and `L` for the
/// Cholesky kernel).
pub fn episode_gradients(
    model: &EmbeddingModel,
    kernel: &DistanceKernel,
    episode: &Episode,
    config: &LossConfig,
) -> Result<(f64, Gradients)> {
    config.validate()?;
    let fwd = forward(model, kernel, episode)?;
    let loss = loss_from(&fwd, config);
    let n_q = fwd.query_labels.len();
    let n_way = fwd.protos.nrows();

    // d loss / d dist = (onehot - p) / n_query
    let mut g = -class_probabilities(fwd.dists.view());
    for (q, &k) in fwd.query_labels.iter().enumerate() {
        g[[q, k]] += 1.0;
    }
    g /= n_q as f64;
    if let DistanceKernel::Rbf { gamma } = kernel {
        g.zip_mut_with(&fwd.sq, |gv, &s| *gv *= 2.0 * gamma * (-gamma * s).exp());
    }

    let mut g_uq = Array2::<f64>::zeros(fwd.uq.dim());
    let mut g_uc = Array2::<f64>::zeros(fwd.uc.dim());
    for q in 0..n_q {
        for k in 0..n_way {
            let w = 2.0 * g[[q, k]];
            if w == 0.0 {
                continue;
            }
            let diff = &fwd.uq.row(q) - &fwd.uc.row(k);
            g_uq.row_mut(q).scaled_add(w, &diff);
            g_uc.row_mut(k).scaled_add(-w, &diff);
        }
    }

    let (g_eq, mut g_c, d_cholesky) = match kernel {
        DistanceKernel::Cholesky { l } => {
            let mut d_l = fwd.eq.t().dot(&g_uq) + fwd.protos.t().dot(&g_uc);
            for ((i, j), v) in d_l.indexed_iter_mut() {
                if j >= i {
                    *v = 0.0;
                }
            }
            (g_uq.dot(&l.t()), g_uc.dot(&l.t()), Some(d_l))
        }
        _ => (g_uq, g_uc, None),
    };

    if config.use_separation {
        for i in 0..n_way {
            for j in 0..n_way {
                if i == j {
                    continue;
                }
                let diff = &fwd.protos.row(i) - &fwd.protos.row(j);
                if config.delta_v - diff.dot(&diff) > 0.0 {
                    // d/d mu_i of -lambda |mu_i - mu_j|^2, and the mirror for mu_j
                    g_c.row_mut(i).scaled_add(-2.0 * config.lambda, &diff);
                    g_c.row_mut(j).scaled_add(2.0 * config.lambda, &diff);
                }
            }
        }
    }

    let mut g_es = Array2::<f64>::zeros(fwd.es.dim());
    for (mut row, &k) in g_es.rows_mut().into_iter().zip(&fwd.support_labels) {
        row.scaled_add(1.0 / fwd.counts[k] as f64, &g_c.row(k));
    }

    let slope = |e: &Array2<f64>| e.mapv(|v| model.kind.slope_from_output(v));
    let g_zs = g_es * slope(&fwd.es);
    let g_zq = g_eq * slope(&fwd.eq);
    let d_weights = g_zq.t().dot(&fwd.xq) + g_zs.t().dot(&fwd.xs);

    let grads = Gradients {
        d_weights,
        d_cholesky,
    };
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical("non-finite loss or gradient".into()));
    }
    Ok((loss, grads))
}

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference<F>(mut f: F, at: f64, h: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    Ok((f(at + h)? - f(at - h)?) / (2.0 * h))
}

/// Central-difference gradients of [`episode_loss`], one parameter at a time.
/// Only the strict lower triangle of `L` is perturbed.
pub fn finite_diff_gradients(
    model: &EmbeddingModel,
    kernel: &DistanceKernel,
    episode: &Episode,
    config: &LossConfig,
    h: f64,
) -> Result<Gradients> {
    let mut probe = model.clone();
    let mut d_weights = Array2::zeros(model.weights().dim());
    for idx in ndarray::indices(model.weights().dim()) {
        let orig = model.weights()[idx];
        d_weights[idx] = central_difference(
            |w| {
                probe.weights_mut()[idx] = w;
                episode_loss(&probe, kernel, episode, config)
            },
            orig,
            h,
        )?;
        probe.weights_mut()[idx] = orig;
    }

    let d_cholesky = match kernel {
        DistanceKernel::Cholesky { l } => {
            let mut d_l = Array2::zeros(l.dim());
            let mut probe_l = l.clone();
            for i in 0..l.nrows() {
                for j in 0..i {
                    let orig = l[[i, j]];
                    d_l[[i, j]] = central_difference(
                        |v| {
                            probe_l[[i, j]] = v;
                            episode_loss(model, &DistanceKernel::Cholesky { l: probe_l.clone() }, episode, config)
                        },
                        orig,
                        h,
                    )?;
                    probe_l[[i, j]] = orig;
                }
            }
            Some(d_l)
        }
        _ => None,
    };
    Ok(Gradients {
        d_weights,
        d_cholesky,
    })
}

/// Entries whose magnitudes are both below this are compared absolutely.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-6;

/// `max |a - b| / max(|a|, |b|, floor)` over every parameter.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients) -> f64 {
    fn worst(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(GRADIENT_CHECK_FLOOR))
            .fold(0.0, f64::max)
    }
    let mut err = worst(&analytic.d_weights, &numeric.d_weights);
    match (&analytic.d_cholesky, &numeric.d_cholesky) {
        (Some(a), Some(b)) => err = err.max(worst(a, b)),
        (None, None) => {}
        _ => return f64::INFINITY,
    }
    err
}

/// `(correct, total)` over the query points of an episode.
pub(crate) fn accuracy_counts(predicted: &[usize], episode: &Episode) -> (usize, usize) {
    let correct = predicted
        .iter()
        .zip(&episode.query)
        .filter(|(p, q)| **p == q.label)
        .count();
    (correct, episode.query.len())
}
