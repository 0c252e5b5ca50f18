use std::path::Path;

use crate::error::{Error, Result};

use super::TARGET_SAMPLE_RATE;

/// 2^31: magnitude of int32 negative full scale.
pub const INT32_FULL_SCALE: f64 = 2_147_483_648.0;
const INT32_MAX: f64 = 2_147_483_647.0;

/// Mono signal in int32 full-scale units at the target sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_path: String,
}

impl AudioClip {
    /// Builds a clip from mono samples already in int32 units, resampling to
    /// 22050 Hz when needed and clamping to the int32 range.
    pub fn from_mono(samples: Vec<f64>, sample_rate: u32, source_path: impl Into<String>) -> Self {
        let mut samples = if sample_rate == TARGET_SAMPLE_RATE {
            samples
        } else {
            resample_linear(&samples, sample_rate, TARGET_SAMPLE_RATE)
        };
        for s in &mut samples {
            *s = s.clamp(-INT32_FULL_SCALE, INT32_MAX);
        }
        Self {
            samples,
            sample_rate: TARGET_SAMPLE_RATE,
            source_path: source_path.into(),
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Reads a PCM WAV file into an [`AudioClip`].
///
/// Integer samples of bit depth `b` are multiplied by `2^(32-b)`, float
/// samples by `2^31`, so full-scale input lands on the int32 rails. Channels
/// are averaged.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 {
        return Err(Error::Format {
            path: path.into(),
            reason: "zero channels".into(),
        });
    }

    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            if spec.bits_per_sample == 0 || spec.bits_per_sample > 32 {
                return Err(Error::Format {
                    path: path.into(),
                    reason: format!("unsupported bit depth {}", spec.bits_per_sample),
                });
            }
            let scale = 2f64.powi(32 - i32::from(spec.bits_per_sample));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Format {
                    path: path.into(),
                    reason: format!("unsupported float bit depth {}", spec.bits_per_sample),
                });
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(|v| f64::from(v) * INT32_FULL_SCALE))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
    };

    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();

    Ok(AudioClip::from_mono(
        mono,
        spec.sample_rate,
        path.to_string_lossy().into_owned(),
    ))
}

fn wav_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Format {
            path: path.into(),
            reason: other.to_string(),
        },
    }
}

/// Linear-interpolation resampler.
pub fn resample_linear(samples: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    if samples.is_empty() || from_rate == to_rate {
        return samples.to_vec();
    }
    let n = samples.len() as u64;
    let out_len = ((n * u64::from(to_rate) + u64::from(from_rate) / 2) / u64::from(from_rate)).max(1);
    let step = f64::from(from_rate) / f64::from(to_rate);
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(samples.len() - 1);
            let hi = (lo + 1).min(samples.len() - 1);
            let frac = pos - lo as f64;
            samples[lo] + (samples[hi] - samples[lo]) * frac
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_i16(path: &Path, channels: u16, rate: u32, data: &[i16]) {
        let spec = hound::WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).unwrap();
        for &s in data {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn silence_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("silence.wav");
        write_i16(&p, 1, 22050, &vec![0; 22050]);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.samples.len(), 22050);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
        assert_eq!(clip.sample_rate, 22050);
    }

    #[test]
    fn antiphase_stereo_cancels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stereo.wav");
        let data: Vec<i16> = (0..2000)
            .flat_map(|i| {
                let x = ((i * 37) % 20000) as i16 - 10000;
                [x, -x]
            })
            .collect();
        write_i16(&p, 2, 22050, &data);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.samples.len(), 2000);
        assert!(clip.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_16bit_matches_rescale_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dc.wav");
        write_i16(&p, 1, 22050, &vec![32767; 500]);
        let clip = load_audio(&p).unwrap();
        // sample-by-sample oracle: value / 2^15 * 2^31
        let expected = 32767.0 / 32768.0 * 2_147_483_648.0;
        assert_eq!(expected, 32767.0 * 65536.0);
        for &s in &clip.samples {
            assert!((s - expected).abs() <= 0.5);
        }
        assert!(clip.samples.iter().all(|&s| (-INT32_FULL_SCALE..=INT32_MAX).contains(&s)));
    }

    #[test]
    fn resamples_to_target_rate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("44k.wav");
        write_i16(&p, 1, 44100, &vec![100; 44100]);
        let clip = load_audio(&p).unwrap();
        assert_eq!(clip.sample_rate, 22050);
        assert_eq!(clip.samples.len(), 22050);
        assert!(clip.samples.iter().all(|&s| s == 100.0 * 65536.0));
    }

    #[test]
    fn linear_interpolation_midpoints() {
        let out = resample_linear(&[0.0, 2.0, 4.0], 1, 2);
        assert_eq!(out, vec![0.0, 1.0, 2.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn corrupt_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.wav");
        std::fs::write(&p, b"definitely not a riff file").unwrap();
        let err = load_audio(&p).unwrap_err();
        assert!(err.to_string().contains("junk.wav"), "{err}");
        let missing = load_audio(dir.path().join("nope.wav")).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }));
    }
}
