//! Audio frontend: WAV ingestion, mel power spectrogram, PCEN and patching.
//!
//! Recordings are mixed down to mono, resampled to 22050 Hz and rescaled to
//! int32 full scale before the STFT, so PCEN sees the same energy range a
//! 32-bit integer pipeline would.

mod io;
mod mel;
mod patch;
mod pcen;
mod wav;

pub use io::{read_features, write_features, FeatureHeader};
pub(crate) use io::{f32_from_le, read_envelope, write_envelope};
pub use mel::{hz_to_mel, mel_spectrogram, mel_to_hz, MelFilterbank};
pub use patch::{make_patches, patch_at, Patch};
pub use pcen::{pcen, pcen_smoothing_coefficient};
pub use wav::{load_audio, resample_linear, AudioClip, INT32_FULL_SCALE};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample rate every clip is brought to on ingestion.
pub const TARGET_SAMPLE_RATE: u32 = 22050;
/// Frames per model input patch.
pub const PATCH_LEN: usize = 17;
/// Default stride between consecutive patches, in frames.
pub const PATCH_HOP: usize = 8;
pub const N_MELS: usize = 128;
/// Length of a flattened default patch.
pub const PATCH_DIM: usize = PATCH_LEN * N_MELS;

/// STFT, mel and PCEN parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    /// PCEN gain exponent (alpha).
    pub pcen_gain: f64,
    /// PCEN bias (delta).
    pub pcen_bias: f64,
    /// PCEN root compression exponent (r).
    pub pcen_power: f64,
    /// Smoother time constant in seconds.
    pub pcen_time_constant: f64,
    pub pcen_eps: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self {
            sample_rate: TARGET_SAMPLE_RATE,
            n_fft: 1024,
            hop_length: 256,
            n_mels: N_MELS,
            pcen_gain: 0.98,
            pcen_bias: 2.0,
            pcen_power: 0.5,
            pcen_time_constant: 0.4,
            pcen_eps: 1e-6,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive");
        }
        if self.n_fft == 0 || self.hop_length == 0 || self.n_mels == 0 {
            return bad("n_fft, hop_length and n_mels must be positive");
        }
        if !(self.pcen_eps > 0.0) {
            return bad("pcen_eps must be positive");
        }
        if !(self.pcen_gain > 0.0 && self.pcen_gain <= 1.0) {
            return bad("pcen_gain must lie in (0, 1]");
        }
        if !(self.pcen_power > 0.0) {
            return bad("pcen_power must be positive");
        }
        if !(self.pcen_bias >= 0.0) || !(self.pcen_time_constant > 0.0) {
            return bad("pcen_bias must be nonnegative and pcen_time_constant positive");
        }
        Ok(())
    }

    /// Number of STFT frames produced for `n_samples` with center padding.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        1 + n_samples / self.hop_length
    }
}

/// PCEN-normalized mel frames of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct MelPcenGram {
    /// Shape `(n_frames, n_mels)`, all entries nonnegative.
    pub frames: Array2<f32>,
    pub hop_length: usize,
    pub sample_rate: u32,
    pub source_path: String,
}

impl MelPcenGram {
    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame_hop_seconds(&self) -> f64 {
        self.hop_length as f64 / f64::from(self.sample_rate)
    }

    /// Start time of frame `frame` in seconds.
    pub fn frame_time(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_hop_seconds()
    }
}

/// Full feature pipeline for one clip: mel power spectrogram followed by PCEN.
pub fn extract_features(clip: &AudioClip, config: &SpectrogramConfig) -> Result<MelPcenGram> {
    let mel = mel_spectrogram(clip, config)?;
    let mut gram = pcen(&mel, config)?;
    gram.source_path = clip.source_path.clone();
    Ok(gram)
}
