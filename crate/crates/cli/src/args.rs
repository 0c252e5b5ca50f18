//! Command-line flags and the JSON config file they override.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use fewshot_core::corpus::EpisodeSpec;
use fewshot_core::detector::DetectionConfig;
use fewshot_core::embedding::EmbeddingKind;
use fewshot_core::evaluator::DEFAULT_MIN_IOU;
use fewshot_core::frontend::SpectrogramConfig;
use fewshot_core::objective::LossConfig;
use fewshot_core::pipeline::DEFAULT_OVERLAP_FRAC;
use fewshot_core::trainer::{KernelChoice, TrainConfig, DEFAULT_VAL_FRAC, ENSEMBLE_DIMS};

use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "fewshot", version, about = "Few-shot bioacoustic event detection")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Compute PCEN mel features for every WAV file in a directory
    Extract(ExtractArgs),
    /// Train an embedding from cached features and annotations
    Train(TrainArgs),
    /// Detect events in recordings from their first five annotations
    Detect(DetectArgs),
    /// Score a prediction CSV against ground truth
    Score(ScoreArgs),
    /// Run the built-in oracle suites
    Verify,
}

/// Settings shared by every command through `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub spectrogram: SpectrogramOpts,
    pub training: TrainingOpts,
    pub detection: DetectionOpts,
    pub scoring: ScoringOpts,
    pub paths: PathOpts,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Fills every unset field of `$a` from `$b`.
macro_rules! merge {
    ($a:expr, $b:expr; $($f:ident),* $(,)?) => {{
        let (a, b) = ($a, $b);
        Self { $($f: a.$f.or(b.$f),)* }
    }};
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathOpts {
    pub audio_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub patch_cache: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

pub fn required(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| file.clone())
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or set paths.{} in --config)", name.replace('-', "_"))))
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrogramOpts {
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub n_fft: Option<usize>,
    #[arg(long)]
    pub hop_length: Option<usize>,
    #[arg(long)]
    pub n_mels: Option<usize>,
    #[arg(long)]
    pub pcen_gain: Option<f64>,
    #[arg(long)]
    pub pcen_bias: Option<f64>,
    #[arg(long)]
    pub pcen_power: Option<f64>,
    #[arg(long)]
    pub pcen_time_constant: Option<f64>,
    #[arg(long)]
    pub pcen_eps: Option<f64>,
}

impl SpectrogramOpts {
    pub fn merged(self, file: Self) -> Self {
        merge!(self, file; sample_rate, n_fft, hop_length, n_mels, pcen_gain, pcen_bias, pcen_power, pcen_time_constant, pcen_eps)
    }

    pub fn resolve(&self) -> Result<SpectrogramConfig, CliError> {
        let d = SpectrogramConfig::default();
        let cfg = SpectrogramConfig {
            sample_rate: self.sample_rate.unwrap_or(d.sample_rate),
            n_fft: self.n_fft.unwrap_or(d.n_fft),
            hop_length: self.hop_length.unwrap_or(d.hop_length),
            n_mels: self.n_mels.unwrap_or(d.n_mels),
            pcen_gain: self.pcen_gain.unwrap_or(d.pcen_gain),
            pcen_bias: self.pcen_bias.unwrap_or(d.pcen_bias),
            pcen_power: self.pcen_power.unwrap_or(d.pcen_power),
            pcen_time_constant: self.pcen_time_constant.unwrap_or(d.pcen_time_constant),
            pcen_eps: self.pcen_eps.unwrap_or(d.pcen_eps),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelArg {
    Euclidean,
    Cholesky,
    Rbf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Linear,
    Logistic,
    Ensemble,
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOpts {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub n_way: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    #[arg(long)]
    pub n_query: Option<usize>,
    /// Defaults to the pool size divided by the episode size
    #[arg(long)]
    pub episodes_per_epoch: Option<usize>,
    #[arg(long)]
    pub val_episodes: Option<usize>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    /// RBF width, required with --kernel rbf
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    #[arg(long)]
    pub out_dim: Option<usize>,
    /// Member widths for --kind ensemble
    #[arg(long, value_delimiter = ',')]
    pub ensemble_dims: Option<Vec<usize>>,
    /// Add the prototype separation penalty
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub separation: Option<bool>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub delta_v: Option<f64>,
    #[arg(long)]
    pub patch_hop: Option<usize>,
    #[arg(long)]
    pub overlap_frac: Option<f64>,
}

/// Training settings after defaults are applied.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub config: TrainConfig,
    pub ensemble_dims: Option<Vec<usize>>,
    pub val_frac: f64,
    pub patch_hop: usize,
    pub overlap_frac: f64,
}

impl TrainingOpts {
    pub fn merged(self, file: Self) -> Self {
        merge!(self, file; epochs, lr, n_way, k_shot, n_query, episodes_per_epoch, val_episodes, val_frac, seed,
            kernel, gamma, kind, out_dim, ensemble_dims, separation, lambda, delta_v, patch_hop, overlap_frac)
    }

    pub fn resolve(&self) -> Result<TrainSettings, CliError> {
        let d = TrainConfig::default();
        let usage = |m: String| CliError::Usage(m);
        let kernel = match (self.kernel.unwrap_or(KernelArg::Euclidean), self.gamma) {
            (KernelArg::Euclidean, None) => KernelChoice::Euclidean,
            (KernelArg::Cholesky, None) => KernelChoice::Cholesky,
            (KernelArg::Rbf, Some(gamma)) if gamma > 0.0 && gamma.is_finite() => KernelChoice::Rbf { gamma },
            (KernelArg::Rbf, Some(gamma)) => return Err(usage(format!("--gamma must be positive, got {gamma}"))),
            (KernelArg::Rbf, None) => return Err(usage("--kernel rbf needs --gamma".into())),
            (_, Some(_)) => return Err(usage("--gamma only applies to --kernel rbf".into())),
        };
        let (kind, ensemble_dims) = match self.kind.unwrap_or(KindArg::Logistic) {
            KindArg::Linear => (EmbeddingKind::Linear, None),
            KindArg::Logistic => (EmbeddingKind::Logistic, None),
            KindArg::Ensemble => (
                EmbeddingKind::Logistic,
                Some(self.ensemble_dims.clone().unwrap_or_else(|| ENSEMBLE_DIMS.to_vec())),
            ),
        };
        if let Some(dims) = &ensemble_dims {
            if dims.len() < 2 || dims.contains(&0) {
                return Err(usage(format!("--ensemble-dims needs at least two positive widths, got {dims:?}")));
            }
        } else if self.ensemble_dims.is_some() {
            return Err(usage("--ensemble-dims only applies to --kind ensemble".into()));
        }
        let loss_default = LossConfig::default();
        let episode_default = EpisodeSpec::default();
        let config = TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            lr: self.lr.unwrap_or(d.lr),
            episode: EpisodeSpec {
                n_way: self.n_way.unwrap_or(episode_default.n_way),
                k_shot: self.k_shot.unwrap_or(episode_default.k_shot),
                n_query: self.n_query.unwrap_or(episode_default.n_query),
            },
            episodes_per_epoch: self.episodes_per_epoch,
            seed: self.seed.unwrap_or(d.seed),
            kernel,
            loss: LossConfig {
                use_separation: self.separation.unwrap_or(loss_default.use_separation),
                lambda: self.lambda.unwrap_or(loss_default.lambda),
                delta_v: self.delta_v.unwrap_or(loss_default.delta_v),
            },
            out_dim: self.out_dim.unwrap_or(d.out_dim),
            kind,
            in_dim: d.in_dim,
            val_episodes: self.val_episodes.unwrap_or(d.val_episodes),
        };
        config.validate().map_err(|e| usage(e.to_string()))?;
        if !(config.lr > 0.0) {
            return Err(usage(format!("--lr must be positive, got {}", config.lr)));
        }
        let val_frac = self.val_frac.unwrap_or(DEFAULT_VAL_FRAC);
        if !(val_frac > 0.0 && val_frac < 1.0) {
            return Err(usage(format!("--val-frac must lie in (0, 1), got {val_frac}")));
        }
        let overlap_frac = self.overlap_frac.unwrap_or(DEFAULT_OVERLAP_FRAC);
        if !(overlap_frac > 0.0 && overlap_frac <= 1.0) {
            return Err(usage(format!("--overlap-frac must lie in (0, 1], got {overlap_frac}")));
        }
        let patch_hop = self.patch_hop.unwrap_or(DetectionConfig::default().patch_hop);
        if patch_hop == 0 {
            return Err(usage("--patch-hop must be at least 1".into()));
        }
        Ok(TrainSettings {
            config,
            ensemble_dims,
            val_frac,
            patch_hop,
            overlap_frac,
        })
    }
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionOpts {
    #[arg(long)]
    pub prob_threshold: Option<f64>,
    #[arg(long)]
    pub patch_hop: Option<usize>,
    #[arg(long)]
    pub median_filter_width: Option<usize>,
    #[arg(long)]
    pub min_event_duration: Option<f64>,
}

impl DetectionOpts {
    pub fn merged(self, file: Self) -> Self {
        merge!(self, file; prob_threshold, patch_hop, median_filter_width, min_event_duration)
    }

    pub fn resolve(&self) -> Result<DetectionConfig, CliError> {
        let d = DetectionConfig::default();
        let cfg = DetectionConfig {
            prob_threshold: self.prob_threshold.unwrap_or(d.prob_threshold),
            patch_hop: self.patch_hop.unwrap_or(d.patch_hop),
            median_filter_width: self.median_filter_width.unwrap_or(d.median_filter_width),
            min_event_duration: self.min_event_duration.unwrap_or(d.min_event_duration),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringOpts {
    #[arg(long)]
    pub min_iou: Option<f64>,
    /// Leading ground-truth events per recording left out of scoring
    /// (5 when they served as detection support)
    #[arg(long)]
    pub skip_shots: Option<usize>,
}

impl ScoringOpts {
    pub fn merged(self, file: Self) -> Self {
        merge!(self, file; min_iou, skip_shots)
    }

    pub fn resolve(&self) -> Result<(f64, usize), CliError> {
        let min_iou = self.min_iou.unwrap_or(DEFAULT_MIN_IOU);
        if !(min_iou > 0.0 && min_iou <= 1.0) {
            return Err(CliError::Usage(format!("--min-iou must lie in (0, 1], got {min_iou}")));
        }
        Ok((min_iou, self.skip_shots.unwrap_or(0)))
    }
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// Directory searched recursively for .wav files
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    /// Where feature files are written
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub spectrogram: SpectrogramOpts,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Feature files written by `extract`
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Annotation CSV, or a directory of them
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Output checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Per-epoch JSON lines report (default: checkpoint path with .report.jsonl)
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Labeled patch cache; read if present, written otherwise
    #[arg(long)]
    pub patch_cache: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub training: TrainingOpts,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Feature files written by `extract`
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Annotation CSV with at least five POS events per recording, or a
    /// directory of them
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Prediction CSV to write
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub detection: DetectionOpts,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Prediction CSV
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Ground-truth CSV, or a directory of them
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringOpts,
}
