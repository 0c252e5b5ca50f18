use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

use super::{AudioClip, SpectrogramConfig};

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(hz: f64) -> f64 {
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel < MIN_LOG_MEL {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    }
}

/// One triangular filter stored as its nonzero span.
#[derive(Debug, Clone)]
struct Filter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Slaney-normalized triangular filterbank spanning 0 Hz to Nyquist.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    filters: Vec<Filter>,
    centers_hz: Vec<f64>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize) -> Self {
        let n_bins = n_fft / 2 + 1;
        let sr = f64::from(sample_rate);
        let fmax = sr / 2.0;
        let mel_max = hz_to_mel(fmax);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let fft_hz: Vec<f64> = (0..n_bins).map(|k| k as f64 * sr / n_fft as f64).collect();

        let filters = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let enorm = 2.0 / (hi - lo);
                let dense: Vec<f64> = fft_hz
                    .iter()
                    .map(|&f| {
                        let rising = (f - lo) / (mid - lo);
                        let falling = (hi - f) / (hi - mid);
                        rising.min(falling).max(0.0) * enorm
                    })
                    .collect();
                let first = dense.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = dense.iter().rposition(|&w| w > 0.0).map_or(first, |p| p + 1);
                Filter {
                    first_bin: first,
                    weights: dense[first..last.max(first)].to_vec(),
                }
            })
            .collect();

        Self {
            filters,
            centers_hz: edges[1..=n_mels].to_vec(),
            n_bins,
        }
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    /// Center frequency of each filter in Hz.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Dense `(n_mels, n_fft/2 + 1)` weight matrix.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.filters.len(), self.n_bins));
        for (m, f) in self.filters.iter().enumerate() {
            for (j, &w) in f.weights.iter().enumerate() {
                out[[m, f.first_bin + j]] = w;
            }
        }
        out
    }

    /// Projects one power spectrum onto the filterbank.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.filters) {
            *o = f
                .weights
                .iter()
                .zip(&power[f.first_bin..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let j = i.rem_euclid(period);
    if j >= n as isize {
        (period - j) as usize
    } else {
        j as usize
    }
}

/// Periodic Hann window.
pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// `|STFT|^2` with a Hann window and reflect center padding, shape
/// `(1 + N / hop, n_fft / 2 + 1)`.
pub fn power_spectrogram(clip: &AudioClip, config: &SpectrogramConfig) -> Result<Array2<f64>> {
    config.validate()?;
    if clip.samples.is_empty() {
        return Err(Error::Domain("cannot compute a spectrogram of an empty clip".into()));
    }
    let n_fft = config.n_fft;
    let n_bins = n_fft / 2 + 1;
    let n_frames = config.n_frames(clip.samples.len());
    let pad = (n_fft / 2) as isize;
    let window = hann(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); n_fft];
    let mut out = Array2::zeros((n_frames, n_bins));

    for t in 0..n_frames {
        let origin = (t * config.hop_length) as isize - pad;
        for (k, slot) in buf.iter_mut().enumerate() {
            let x = clip.samples[reflect_index(origin + k as isize, clip.samples.len())];
            *slot = Complex::new(x * window[k], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (dst, c) in out.row_mut(t).iter_mut().zip(&buf[..n_bins]) {
            *dst = c.norm_sqr();
        }
    }
    Ok(out)
}

/// Mel power spectrogram of shape `(n_frames, n_mels)`.
pub fn mel_spectrogram(clip: &AudioClip, config: &SpectrogramConfig) -> Result<Array2<f64>> {
    let power = power_spectrogram(clip, config)?;
    let bank = MelFilterbank::new(config.sample_rate, config.n_fft, config.n_mels);
    let mut mel = Array2::zeros((power.nrows(), config.n_mels));
    for (p, mut m) in power.rows().into_iter().zip(mel.rows_mut()) {
        bank.apply(
            p.as_slice().expect("row-major"),
            m.as_slice_mut().expect("row-major"),
        );
    }
    Ok(mel)
}
