//! Built-in oracle suites: gradients against finite differences, matching
//! against exhaustive search, kernel identities, metric and loss fixtures.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng as _;

use crate::corpus::{Episode, EpisodeItem};
use crate::embedding::{EmbeddingKind, EmbeddingModel};
use crate::error::Result;
use crate::evaluator::{brute_force_matching, compute_metrics, match_events, Interval};
use crate::objective::{
    class_probabilities, episode_gradients, episode_loss, finite_diff_gradients, max_relative_error,
    project_cholesky, DistanceKernel, Gradients, LossConfig,
};
use crate::rng::{self, Rng};

/// Analytic gradient under test; [`episode_gradients`] in normal use.
pub type GradientFn = fn(&EmbeddingModel, &DistanceKernel, &Episode, &LossConfig) -> Result<(f64, Gradients)>;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

const IN_DIM: usize = 12;
const OUT_DIM: usize = 8;

pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;

fn random_episode(rng: &mut Rng, n_way: usize, k_shot: usize, n_query: usize) -> Episode {
    let centers: Vec<Vec<f64>> = (0..n_way)
        .map(|_| (0..IN_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut support = Vec::new();
    let mut query = Vec::new();
    for (label, c) in centers.iter().enumerate() {
        for i in 0..k_shot + n_query {
            let item = EpisodeItem {
                features: c.iter().map(|v| v + rng.gen_range(-0.5..0.5)).collect(),
                label,
            };
            if i < k_shot {
                support.push(item);
            } else {
                query.push(item);
            }
        }
    }
    Episode {
        support,
        query,
        class_map: (0..n_way as u32).collect(),
    }
}

fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Worst relative gradient error over every model kind, kernel and loss
/// setting, with `trials` random 3-way 2-shot 2-query episodes each.
pub fn gradient_suite(grad: GradientFn, trials: u64) -> Result<(f64, String)> {
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    for kind in [EmbeddingKind::Linear, EmbeddingKind::Logistic] {
        for use_separation in [false, true] {
            let cfg = LossConfig {
                use_separation,
                ..Default::default()
            };
            for k in 0..4u64 {
                for trial in 0..trials {
                    let mut r = rng::seeded(7919 * k + 31 * trial + u64::from(use_separation));
                    let w = Array2::from_shape_fn((OUT_DIM, IN_DIM), |_| r.gen_range(-0.8..0.8));
                    let model = EmbeddingModel::from_weights(kind, w)?;
                    let kernel = match k {
                        0 => DistanceKernel::Euclidean,
                        1 => DistanceKernel::Cholesky {
                            l: project_cholesky(&Array2::from_shape_fn((OUT_DIM, OUT_DIM), |_| {
                                r.gen_range(-0.5..0.5)
                            }))?,
                        },
                        2 => DistanceKernel::rbf(0.01)?,
                        _ => DistanceKernel::rbf(0.1)?,
                    };
                    let ep = random_episode(&mut r, 3, 2, 2);
                    let (_, analytic) = grad(&model, &kernel, &ep, &cfg)?;
                    let numeric = finite_diff_gradients(&model, &kernel, &ep, &cfg, GRADIENT_STEP)?;
                    let err = max_relative_error(&analytic, &numeric);
                    if !(err <= worst) {
                        worst = err;
                        worst_at = format!(
                            "{} {} separation={use_separation} trial {trial}",
                            kind.as_str(),
                            kernel.variant_name()
                        );
                    }
                }
            }
        }
    }
    Ok((worst, worst_at))
}

/// Number of random instances (up to 8 x 8) where the matcher's cardinality
/// or total IoU disagrees with exhaustive search.
pub fn matching_suite(instances: usize, seed: u64) -> usize {
    let mut r = rng::seeded(seed);
    let mut mismatches = 0;
    for _ in 0..instances {
        let draw = |r: &mut Rng| -> Vec<Interval> {
            let n = r.gen_range(0..=8);
            (0..n)
                .map(|_| {
                    let s = r.gen_range(0.0..10.0);
                    Interval {
                        start: s,
                        end: s + r.gen_range(0.2..3.0),
                    }
                })
                .collect()
        };
        let preds = draw(&mut r);
        let gts = draw(&mut r);
        let m = match_events(&preds, &gts, 0.3);
        let (card, total) = brute_force_matching(&preds, &gts, 0.3);
        let got: f64 = m.pairs.iter().map(|&(i, j)| crate::evaluator::iou(&preds[i], &gts[j])).sum();
        if m.tp != card || (got - total).abs() > 1e-6 {
            mismatches += 1;
        }
    }
    mismatches
}

/// Largest deviation seen in each kernel identity:
/// Cholesky with `L = I` against Euclidean, RBF against its closed form,
/// and `K(x,x) + K(y,y) - 2K(x,y)` against the squared norm.
pub fn kernel_suite(pairs: usize, seed: u64) -> Result<[f64; 3]> {
    let mut r = rng::seeded(seed);
    let ident = DistanceKernel::cholesky_identity(OUT_DIM);
    let mut dev = [0.0f64; 3];
    for _ in 0..pairs {
        let x = random_vec(&mut r, OUT_DIM);
        let y = random_vec(&mut r, OUT_DIM);
        let sq: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        dev[0] = dev[0].max((ident.squared_distance(&x, &y)? - DistanceKernel::Euclidean.squared_distance(&x, &y)?).abs());
        for gamma in [0.01, 0.1, 1.0] {
            let rbf = DistanceKernel::rbf(gamma)?;
            dev[1] = dev[1].max((rbf.squared_distance(&x, &y)? - (2.0 - 2.0 * (-gamma * sq).exp())).abs());
        }
        let k = &DistanceKernel::Euclidean;
        let via_kernel = k.kernel(&x, &x)? + k.kernel(&y, &y)? - 2.0 * k.kernel(&x, &y)?;
        dev[2] = dev[2].max((via_kernel - sq).abs());
    }
    Ok(dev)
}

/// Table rows `(tp, fp, fn)` with their published percentages.
pub const METRIC_FIXTURES: [((usize, usize, usize), (f64, f64, f64)); 3] = [
    ((33, 62, 197), (34.73, 14.34, 20.31)),
    ((21, 1333, 209), (1.55, 9.13, 2.65)),
    ((11, 1871, 219), (0.58, 4.78, 1.042)),
];

/// Largest deviation in percentage points over the metric fixtures.
pub fn metric_suite() -> f64 {
    METRIC_FIXTURES
        .iter()
        .map(|&((tp, fp, fn_), (p, r, f))| {
            let m = compute_metrics(tp, fp, fn_);
            (100.0 * m.precision - p)
                .abs()
                .max((100.0 * m.recall - r).abs())
                .max((100.0 * m.fscore - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Deviation of a 10-way constant-embedding loss from `ln 10`, and of the
/// probability row sums from 1.
pub fn loss_suite(seed: u64) -> Result<(f64, f64)> {
    let mut r = rng::seeded(seed);
    let ep = random_episode(&mut r, 10, 2, 2);
    let model = EmbeddingModel::from_weights(EmbeddingKind::Logistic, Array2::zeros((OUT_DIM, IN_DIM)))?;
    let loss = episode_loss(&model, &DistanceKernel::Euclidean, &ep, &LossConfig::default())?;
    let d = Array2::from_shape_fn((50, 10), |_| r.gen_range(0.0..40.0));
    let row_dev = class_probabilities(d.view())
        .rows()
        .into_iter()
        .map(|row| (row.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(((loss - 10f64.ln()).abs(), row_dev))
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    let t = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    SuiteResult {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// Runs every suite with `grad` as the analytic gradient.
pub fn run_all_with(grad: GradientFn) -> Vec<SuiteResult> {
    vec![
        timed("gradients", || {
            let (worst, at) = gradient_suite(grad, 20)?;
            Ok((
                worst <= GRADIENT_TOLERANCE,
                format!("max relative error {worst:.3e} ({at}), tolerance {GRADIENT_TOLERANCE:e}"),
            ))
        }),
        timed("matching", || {
            let bad = matching_suite(1000, 17);
            Ok((bad == 0, format!("{bad} of 1000 instances disagree with exhaustive search")))
        }),
        timed("kernels", || {
            let [chol, rbf, dot] = kernel_suite(50, 23)?;
            Ok((
                chol <= 1e-10 && rbf <= 1e-12 && dot <= 1e-9,
                format!("identity Cholesky {chol:.1e}, rbf {rbf:.1e}, dot-product expansion {dot:.1e}"),
            ))
        }),
        timed("metrics", || {
            let dev = metric_suite();
            Ok((dev <= 0.01, format!("max deviation {dev:.4} percentage points")))
        }),
        timed("loss", || {
            let (ln10, rows) = loss_suite(29)?;
            Ok((
                ln10 <= 1e-9 && rows <= 1e-12,
                format!("uniform loss off ln 10 by {ln10:.1e}, row sums off 1 by {rows:.1e}"),
            ))
        }),
    ]
}

pub fn run_all() -> Vec<SuiteResult> {
    run_all_with(episode_gradients)
}
