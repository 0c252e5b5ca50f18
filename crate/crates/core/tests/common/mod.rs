#![allow(dead_code)]

use fewshot_core::corpus::{Episode, EpisodeItem};
use fewshot_core::embedding::{EmbeddingKind, EmbeddingModel};
use fewshot_core::objective::{project_cholesky, DistanceKernel};
use fewshot_core::rng::{seeded, Rng};
use ndarray::Array2;
use rand::Rng as _;

pub const IN_DIM: usize = 12;
pub const OUT_DIM: usize = 8;

pub fn random_episode(rng: &mut Rng, n_way: usize, k_shot: usize, n_query: usize, in_dim: usize) -> Episode {
    let centers: Vec<Vec<f64>> = (0..n_way)
        .map(|_| (0..in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let item = |label: usize, rng: &mut Rng| EpisodeItem {
        features: centers[label].iter().map(|c| c + rng.gen_range(-0.5..0.5)).collect(),
        label,
    };
    let mut support = Vec::new();
    let mut query = Vec::new();
    for k in 0..n_way {
        for _ in 0..k_shot {
            support.push(item(k, rng));
        }
        for _ in 0..n_query {
            query.push(item(k, rng));
        }
    }
    Episode {
        support,
        query,
        class_map: (0..n_way as u32).collect(),
    }
}

pub fn random_model(rng: &mut Rng, kind: EmbeddingKind) -> EmbeddingModel {
    // wider than the default init so logistic units leave the linear regime
    let w = Array2::from_shape_fn((OUT_DIM, IN_DIM), |_| rng.gen_range(-0.8..0.8));
    EmbeddingModel::from_weights(kind, w).unwrap()
}

pub fn random_cholesky(rng: &mut Rng) -> DistanceKernel {
    let l = Array2::from_shape_fn((OUT_DIM, OUT_DIM), |_| rng.gen_range(-0.5..0.5));
    DistanceKernel::Cholesky {
        l: project_cholesky(&l).unwrap(),
    }
}

/// Every kernel configuration exercised by the gradient checks.
pub fn kernels(rng: &mut Rng) -> Vec<DistanceKernel> {
    vec![
        DistanceKernel::Euclidean,
        random_cholesky(rng),
        DistanceKernel::rbf(0.01).unwrap(),
        DistanceKernel::rbf(0.1).unwrap(),
    ]
}

pub fn rng(seed: u64) -> Rng {
    seeded(seed)
}
