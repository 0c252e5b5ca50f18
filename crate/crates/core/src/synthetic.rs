//! Synthetic tone-in-noise corpora with planted, exactly known events.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::INT32_FULL_SCALE;
use crate::rng::{self, Rng};

/// A call type: a sweep from `start_hz` to `end_hz` with an optional
/// harmonic at twice the frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneClass {
    pub name: String,
    pub start_hz: f64,
    pub end_hz: f64,
    pub harmonic: f64,
}

impl ToneClass {
    pub fn new(name: &str, start_hz: f64, end_hz: f64, harmonic: f64) -> Self {
        Self {
            name: name.to_string(),
            start_hz,
            end_hz,
            harmonic,
        }
    }
}

/// Three well separated call types.
pub fn default_classes() -> Vec<ToneClass> {
    vec![
        ToneClass::new("tone_low", 700.0, 900.0, 0.3),
        ToneClass::new("chirp_mid", 2000.0, 3200.0, 0.0),
        ToneClass::new("tone_high", 5600.0, 5400.0, 0.2),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub sample_rate: u32,
    pub duration: f64,
    pub event_len: (f64, f64),
    pub gap: (f64, f64),
    pub amplitude: (f64, f64),
    pub noise_std: f64,
    pub classes: Vec<ToneClass>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            duration: 600.0,
            event_len: (0.3, 0.8),
            gap: (1.0, 4.0),
            amplitude: (0.15, 0.35),
            noise_std: 0.03,
            classes: default_classes(),
        }
    }
}

/// A planted event: class index into the spec's classes, times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub class: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecording {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub events: Vec<PlantedEvent>,
}

const RAMP_SECONDS: f64 = 0.01;

/// Renders white noise plus events of the `present` classes, separated by
/// uniformly drawn gaps.
pub fn generate_recording(spec: &SyntheticSpec, present: &[usize], rng: &mut Rng) -> Result<SyntheticRecording> {
    if present.is_empty() || present.iter().any(|&c| c >= spec.classes.len()) {
        return Err(Error::Config(format!(
            "class indices {present:?} invalid for {} classes",
            spec.classes.len()
        )));
    }
    if !(spec.event_len.0 > 0.0 && spec.event_len.0 <= spec.event_len.1 && spec.gap.0 > 0.0 && spec.gap.0 <= spec.gap.1) {
        return Err(Error::Config("event_len and gap ranges must be positive and ordered".into()));
    }
    let sr = f64::from(spec.sample_rate);
    let n = (spec.duration * sr).round() as usize;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples: Vec<f64> = (0..n).map(|_| noise.sample(rng)).collect();

    let mut events = Vec::new();
    let mut cursor = 0.0;
    loop {
        let start = cursor + rng.gen_range(spec.gap.0..=spec.gap.1);
        let end = start + rng.gen_range(spec.event_len.0..=spec.event_len.1);
        if end + spec.gap.0 > spec.duration {
            break;
        }
        let class = present[rng.gen_range(0..present.len())];
        let amp = rng.gen_range(spec.amplitude.0..=spec.amplitude.1);
        render_call(&mut samples, sr, &spec.classes[class], start, end, amp);
        events.push(PlantedEvent { class, start, end });
        cursor = end;
    }
    Ok(SyntheticRecording {
        samples,
        sample_rate: spec.sample_rate,
        events,
    })
}

fn render_call(out: &mut [f64], sr: f64, class: &ToneClass, start: f64, end: f64, amp: f64) {
    let first = (start * sr).ceil() as usize;
    let last = ((end * sr).floor() as usize).min(out.len());
    let dur = end - start;
    let mut phase = 0.0;
    for (i, s) in out.iter_mut().enumerate().take(last).skip(first) {
        let t = i as f64 / sr - start;
        let f = class.start_hz + (class.end_hz - class.start_hz) * t / dur;
        phase += 2.0 * PI * f / sr;
        let ramp = (t.min(dur - t) / RAMP_SECONDS).clamp(0.0, 1.0);
        let env = amp * 0.5 * (1.0 - (PI * ramp).cos());
        *s += env * (phase.sin() + class.harmonic * (2.0 * phase).sin());
    }
}

/// Writes mono 32-bit integer PCM.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s * INT32_FULL_SCALE).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32;
        w.write_sample(v).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

/// Multi-class training annotations: one column per class, POS for the
/// event's class and NEG for the rest.
pub fn training_csv(audiofile: &str, rec: &SyntheticRecording, classes: &[ToneClass]) -> String {
    let mut s = String::from("Audiofilename,Starttime,Endtime");
    for c in classes {
        s.push(',');
        s.push_str(&c.name);
    }
    s.push('\n');
    for e in &rec.events {
        write!(s, "{audiofile},{:.6},{:.6}", e.start, e.end).expect("string write");
        for i in 0..classes.len() {
            s.push_str(if i == e.class { ",POS" } else { ",NEG" });
        }
        s.push('\n');
    }
    s
}

/// Single-class evaluation annotations (`Q` column) for events of `target`.
pub fn evaluation_csv(audiofile: &str, rec: &SyntheticRecording, target: usize) -> String {
    let mut s = String::from("Audiofilename,Starttime,Endtime,Q\n");
    for e in rec.events.iter().filter(|e| e.class == target) {
        writeln!(s, "{audiofile},{:.6},{:.6},POS", e.start, e.end).expect("string write");
    }
    s
}

/// Files of a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusLayout {
    pub train_wavs: Vec<PathBuf>,
    pub train_csvs: Vec<PathBuf>,
    pub eval_wavs: Vec<PathBuf>,
    pub eval_csvs: Vec<PathBuf>,
}

/// Writes `n_train` multi-class training recordings under `dir/train` and
/// one single-class evaluation recording per class under `dir/eval`.
pub fn write_corpus(dir: impl AsRef<Path>, spec: &SyntheticSpec, n_train: usize, seed: u64) -> Result<CorpusLayout> {
    let dir = dir.as_ref();
    let (train_dir, eval_dir) = (dir.join("train"), dir.join("eval"));
    for d in [&train_dir, &eval_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut rng = rng::child(seed, "synthetic");
    let all: Vec<usize> = (0..spec.classes.len()).collect();
    let mut layout = CorpusLayout {
        train_wavs: vec![],
        train_csvs: vec![],
        eval_wavs: vec![],
        eval_csvs: vec![],
    };
    for i in 0..n_train {
        let name = format!("train_{i:02}.wav");
        let rec = generate_recording(spec, &all, &mut rng)?;
        let (wav, csv) = (train_dir.join(&name), train_dir.join(format!("train_{i:02}.csv")));
        write_wav(&wav, &rec.samples, rec.sample_rate)?;
        std::fs::write(&csv, training_csv(&name, &rec, &spec.classes)).map_err(|e| Error::io(&csv, e))?;
        layout.train_wavs.push(wav);
        layout.train_csvs.push(csv);
    }
    for (c, class) in spec.classes.iter().enumerate() {
        let name = format!("eval_{}.wav", class.name);
        let rec = generate_recording(spec, &[c], &mut rng)?;
        let (wav, csv) = (eval_dir.join(&name), eval_dir.join(format!("eval_{}.csv", class.name)));
        write_wav(&wav, &rec.samples, rec.sample_rate)?;
        std::fs::write(&csv, evaluation_csv(&name, &rec, c)).map_err(|e| Error::io(&csv, e))?;
        layout.eval_wavs.push(wav);
        layout.eval_csvs.push(csv);
    }
    Ok(layout)
}
