//! Episodic gradient-descent training with per-epoch validation accuracy.

mod checkpoint;

pub use checkpoint::{
    checkpoint_from_str, checkpoint_to_string, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    Checkpoint, FORMAT_VERSION,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{balance_oversample, split_train_val, EpisodeSampler, EpisodeSpec, LabeledPatch};
use crate::embedding::{EmbeddingKind, EmbeddingModel, EnsembleModel};
use crate::error::{Error, Result};
use crate::frontend::PATCH_DIM;
use crate::objective::{
    accuracy_counts, episode_gradients, episode_predictions, project_cholesky, DistanceKernel, LossConfig,
};
use crate::rng::{self, purpose, Rng};

/// Which distance kernel to train with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum KernelChoice {
    Euclidean,
    Cholesky,
    Rbf { gamma: f64 },
}

impl KernelChoice {
    /// Initial kernel for an embedding of dimension `dim` (`L = I` for Cholesky).
    pub fn initial(self, dim: usize) -> Result<DistanceKernel> {
        match self {
            KernelChoice::Euclidean => Ok(DistanceKernel::Euclidean),
            KernelChoice::Cholesky => Ok(DistanceKernel::cholesky_identity(dim)),
            KernelChoice::Rbf { gamma } => DistanceKernel::rbf(gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub episode: EpisodeSpec,
    /// Defaults to `floor(pool / episode size)`, at least 1.
    pub episodes_per_epoch: Option<usize>,
    pub seed: u64,
    pub kernel: KernelChoice,
    pub loss: LossConfig,
    pub out_dim: usize,
    pub kind: EmbeddingKind,
    pub in_dim: usize,
    /// Episodes drawn for each validation pass.
    pub val_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            lr: 1e-4,
            episode: EpisodeSpec::default(),
            episodes_per_epoch: None,
            seed: 0,
            kernel: KernelChoice::Euclidean,
            loss: LossConfig::default(),
            out_dim: 256,
            kind: EmbeddingKind::Logistic,
            in_dim: PATCH_DIM,
            val_episodes: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be nonnegative, got {}", self.lr)));
        }
        if self.episodes_per_epoch == Some(0) || self.val_episodes == 0 {
            return Err(Error::Config("episode counts must be at least 1".into()));
        }
        self.episode.validate()?;
        self.loss.validate()?;
        self.kernel.initial(1).map(|_| ())
    }
}

/// One line of the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub final_val_accuracy: f64,
    pub wall_seconds: f64,
    /// Total parameter updates applied.
    pub updates: usize,
}

impl TrainReport {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct") + "\n")
            .collect()
    }
}

/// Shrinks `n_way` to the number of classes that can fill an episode, never
/// below two.
pub fn effective_spec(pool: &[LabeledPatch], spec: &EpisodeSpec, what: &str) -> Result<EpisodeSpec> {
    let eligible = EpisodeSampler::new(pool).eligible_classes(spec.per_class()).len();
    if eligible < 2 {
        return Err(Error::Episode(format!(
            "{what} pool has {eligible} classes with at least {} patches; need 2",
            spec.per_class()
        )));
    }
    if eligible < spec.n_way {
        log::warn!("{what} pool supports only {eligible} classes; using {eligible}-way episodes");
    }
    Ok(EpisodeSpec {
        n_way: spec.n_way.min(eligible),
        ..*spec
    })
}

/// Fraction of query points assigned to their true class over `n_episodes`
/// sampled episodes.
pub fn validation_accuracy(
    model: &EmbeddingModel,
    kernel: &DistanceKernel,
    val_pool: &[LabeledPatch],
    spec: &EpisodeSpec,
    n_episodes: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if val_pool.is_empty() {
        return Err(Error::Episode("validation pool is empty".into()));
    }
    let spec = effective_spec(val_pool, spec, "validation")?;
    let sampler = EpisodeSampler::new(val_pool);
    let (mut correct, mut total) = (0usize, 0usize);
    for _ in 0..n_episodes.max(1) {
        let ep = sampler.sample(&spec, rng)?;
        let predicted = episode_predictions(model, kernel, &ep)?;
        let (c, t) = accuracy_counts(&predicted, &ep);
        correct += c;
        total += t;
    }
    Ok(correct as f64 / total as f64)
}

/// Default share of each class held out for validation.
pub const DEFAULT_VAL_FRAC: f64 = 0.2;

/// Splits a labeled pool per class, then oversamples the event classes of
/// the training side.
pub fn prepare_pools(pool: &[LabeledPatch], val_frac: f64, seed: u64) -> Result<(Vec<LabeledPatch>, Vec<LabeledPatch>)> {
    let (train, val) = split_train_val(pool, val_frac, &mut rng::child(seed, purpose::SPLITS))?;
    let train = balance_oversample(&train, &mut rng::child(seed, purpose::OVERSAMPLE))?;
    Ok((train, val))
}

/// Trains from a freshly initialized model.
pub fn train(
    train_pool: &[LabeledPatch],
    val_pool: &[LabeledPatch],
    config: &TrainConfig,
) -> Result<(EmbeddingModel, DistanceKernel, TrainReport)> {
    config.validate()?;
    let model = EmbeddingModel::init(
        config.kind,
        config.out_dim,
        config.in_dim,
        &mut rng::child(config.seed, purpose::INIT),
    )?;
    let kernel = config.kernel.initial(config.out_dim)?;
    train_from(model, kernel, train_pool, val_pool, config)
}

/// Plain gradient descent, one update per episode:
/// `A -= lr dA` and `L = project(L - lr dL)`.
pub fn train_from(
    mut model: EmbeddingModel,
    mut kernel: DistanceKernel,
    train_pool: &[LabeledPatch],
    val_pool: &[LabeledPatch],
    config: &TrainConfig,
) -> Result<(EmbeddingModel, DistanceKernel, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let spec = effective_spec(train_pool, &config.episode, "training")?;
    let sampler = EpisodeSampler::new(train_pool);
    let per_epoch = config
        .episodes_per_epoch
        .unwrap_or_else(|| (train_pool.len() / spec.episode_size()).max(1));
    let mut episode_rng = rng::child(config.seed, purpose::EPISODES);

    let mut report = TrainReport {
        epochs: Vec::with_capacity(config.epochs),
        final_val_accuracy: 0.0,
        wall_seconds: 0.0,
        updates: 0,
    };
    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        for i in 0..per_epoch {
            let ep = sampler.sample(&spec, &mut episode_rng)?;
            let (loss, grads) = episode_gradients(&model, &kernel, &ep, &config.loss).map_err(|e| match e {
                Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, episode {}: {m}", i + 1)),
                other => other,
            })?;
            loss_sum += loss;
            model.weights_mut().scaled_add(-config.lr, &grads.d_weights);
            if let (DistanceKernel::Cholesky { l }, Some(d_l)) = (&mut kernel, &grads.d_cholesky) {
                l.scaled_add(-config.lr, d_l);
                *l = project_cholesky(l)?;
            }
            report.updates += 1;
        }
        let val_accuracy = validation_accuracy(
            &model,
            &kernel,
            val_pool,
            &config.episode,
            config.val_episodes,
            &mut rng::child(config.seed, purpose::VALIDATION),
        )?;
        let mean_loss = loss_sum / per_epoch as f64;
        log::info!("epoch {epoch}: mean loss {mean_loss:.6}, validation accuracy {val_accuracy:.4}");
        report.epochs.push(EpochReport {
            epoch,
            mean_loss,
            val_accuracy,
        });
        report.final_val_accuracy = val_accuracy;
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((model, kernel, report))
}

/// Trains one member per entry of `out_dims`, member `i` with seed `seed + i`.
pub fn train_ensemble(
    train_pool: &[LabeledPatch],
    val_pool: &[LabeledPatch],
    config: &TrainConfig,
    out_dims: &[usize],
) -> Result<(EnsembleModel, Vec<TrainReport>)> {
    let mut members = Vec::with_capacity(out_dims.len());
    let mut reports = Vec::with_capacity(out_dims.len());
    for (i, &out_dim) in out_dims.iter().enumerate() {
        let member_cfg = TrainConfig {
            out_dim,
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        let (model, kernel, report) = train(train_pool, val_pool, &member_cfg)?;
        members.push((model, kernel));
        reports.push(report);
    }
    Ok((EnsembleModel::new(members)?, reports))
}

/// Default ensemble layout: two logistic members of width 256 and 1024.
pub const ENSEMBLE_DIMS: [usize; 2] = [256, 1024];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PatchSource;
    use ndarray::Array2;
    use rand::Rng as _;

    fn blobs(n_classes: u32, per_class: usize, dim: usize, spread: f64, seed: u64) -> Vec<LabeledPatch> {
        let mut rng = rng::seeded(seed);
        let mut out = Vec::new();
        for c in 0..n_classes {
            let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for i in 0..per_class {
                out.push(LabeledPatch {
                    features: center.iter().map(|v| v + rng.gen_range(-spread..spread)).collect(),
                    class_id: c,
                    source: PatchSource {
                        recording: "blobs".into(),
                        start_frame: i,
                    },
                });
            }
        }
        out
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            lr: 0.01,
            episode: EpisodeSpec { n_way: 3, k_shot: 2, n_query: 2 },
            out_dim: 6,
            in_dim: 10,
            kind: EmbeddingKind::Linear,
            val_episodes: 10,
            ..Default::default()
        }
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let pool = blobs(3, 12, 10, 0.3, 1);
        let cfg = TrainConfig { lr: 0.0, ..small_config() };
        let init = EmbeddingModel::init(cfg.kind, cfg.out_dim, cfg.in_dim, &mut rng::child(cfg.seed, purpose::INIT)).unwrap();
        let (model, _, report) = train(&pool, &pool, &cfg).unwrap();
        assert_eq!(model, init);
        assert_eq!(report.epochs.len(), 2);
        assert_eq!(report.updates, 2 * (36 / 12));
    }

    #[test]
    fn cholesky_structure_survives_training() {
        let pool = blobs(3, 12, 10, 0.3, 2);
        let cfg = TrainConfig { kernel: KernelChoice::Cholesky, lr: 0.5, ..small_config() };
        let (model, kernel, _) = train(&pool, &pool, &cfg).unwrap();
        kernel.validate(model.out_dim()).unwrap();
        match kernel {
            DistanceKernel::Cholesky { l } => assert!(l.indexed_iter().any(|((i, j), v)| i > j && *v != 0.0)),
            _ => unreachable!(),
        }
    }

    #[test]
    fn chance_level_for_constant_embedding() {
        let pool = blobs(5, 20, 10, 0.3, 3);
        let model = EmbeddingModel::from_weights(EmbeddingKind::Logistic, Array2::zeros((4, 10))).unwrap();
        let spec = EpisodeSpec { n_way: 5, k_shot: 5, n_query: 5 };
        let acc = validation_accuracy(&model, &DistanceKernel::Euclidean, &pool, &spec, 100, &mut rng::seeded(4)).unwrap();
        // 2500 query decisions; binomial standard error at p = 0.2
        let se = (0.2f64 * 0.8 / 2500.0).sqrt();
        assert!((acc - 0.2).abs() <= 3.0 * se, "accuracy {acc}");
        assert!(validation_accuracy(&model, &DistanceKernel::Euclidean, &[], &spec, 10, &mut rng::seeded(4)).is_err());
    }

    #[test]
    fn separable_pool_scores_perfectly() {
        let pool = blobs(4, 15, 10, 0.01, 5);
        let model = EmbeddingModel::from_weights(EmbeddingKind::Linear, Array2::eye(10)).unwrap();
        let spec = EpisodeSpec { n_way: 4, k_shot: 5, n_query: 5 };
        let acc = validation_accuracy(&model, &DistanceKernel::Euclidean, &pool, &spec, 50, &mut rng::seeded(6)).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn n_way_is_clipped_to_available_classes() {
        let pool = blobs(3, 12, 10, 0.3, 7);
        let spec = effective_spec(&pool, &EpisodeSpec::default(), "test").unwrap();
        assert_eq!(spec.n_way, 3);
        assert!(effective_spec(&blobs(1, 12, 10, 0.3, 7), &EpisodeSpec::default(), "test").is_err());
    }

    #[test]
    fn report_lines_are_json() {
        let pool = blobs(3, 12, 10, 0.3, 8);
        let (_, _, report) = train(&pool, &pool, &small_config()).unwrap();
        let lines: Vec<serde_json::Value> = report
            .to_json_lines()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["epoch"], 2);
        assert!(lines[0]["mean_loss"].is_f64() && lines[0]["val_accuracy"].is_f64());
    }
}
