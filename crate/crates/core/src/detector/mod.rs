//! Few-shot inference on one recording: prototypes from the first five
//! annotated events, per-patch positive probabilities, and timed events.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{overlap, AnnotationRow, FrameTiming};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::frontend::{patch_at, MelPcenGram, PATCH_LEN};
use crate::objective::DistanceKernel;

/// Number of annotated events handed to the detector.
pub const N_SHOTS: usize = 5;

const EMBED_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionConfig {
    pub prob_threshold: f64,
    /// Frames between consecutive patch starts.
    pub patch_hop: usize,
    /// Odd width in patches; 1 disables filtering.
    pub median_filter_width: usize,
    /// Seconds.
    pub min_event_duration: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            prob_threshold: 0.5,
            patch_hop: 8,
            median_filter_width: 1,
            min_event_duration: 0.0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.prob_threshold > 0.0 && self.prob_threshold < 1.0) {
            return Err(Error::Config(format!(
                "prob_threshold must lie in (0, 1), got {}",
                self.prob_threshold
            )));
        }
        if self.patch_hop == 0 {
            return Err(Error::Config("patch_hop must be at least 1".into()));
        }
        if self.median_filter_width == 0 || self.median_filter_width % 2 == 0 {
            return Err(Error::Config(format!(
                "median_filter_width must be odd, got {}",
                self.median_filter_width
            )));
        }
        if !(self.min_event_duration >= 0.0 && self.min_event_duration.is_finite()) {
            return Err(Error::Config("min_event_duration must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedEvent {
    pub start: f64,
    pub end: f64,
    /// Mean positive probability over the event's patches.
    pub score: f64,
}

/// Flattened support patches for the positive and negative prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub positive: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
    /// End of the last support event in seconds; queries start here.
    pub end_time: f64,
}

/// The first `N_SHOTS` POS rows of `rows` in start-time order.
pub fn first_positive_events(rows: &[AnnotationRow]) -> Result<Vec<AnnotationRow>> {
    let mut pos: Vec<AnnotationRow> = rows.iter().filter(|r| r.is_positive()).cloned().collect();
    if pos.len() < N_SHOTS {
        return Err(Error::Episode(format!(
            "need {N_SHOTS} POS annotations for detection, found {}",
            pos.len()
        )));
    }
    pos.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    pos.truncate(N_SHOTS);
    Ok(pos)
}

fn timing(gram: &MelPcenGram) -> FrameTiming {
    FrameTiming {
        hop_length: gram.hop_length,
        sample_rate: gram.sample_rate,
    }
}

/// Grid patch start frames (multiples of `patch_hop`) of full patches.
fn grid_starts(gram: &MelPcenGram, patch_hop: usize) -> Vec<usize> {
    if gram.n_frames() < PATCH_LEN {
        return vec![0];
    }
    (0..=gram.n_frames() - PATCH_LEN).step_by(patch_hop).collect()
}

/// Positive patches lie at least half inside one of the events; an event
/// shorter than a patch contributes a single patch centered on it instead.
/// Negative patches come from the prefix ending at the last event and touch
/// no event.
pub fn build_support(gram: &MelPcenGram, first5: &[AnnotationRow], patch_hop: usize) -> Result<Support> {
    if first5.len() != N_SHOTS || first5.iter().any(|r| !r.is_positive()) {
        return Err(Error::Episode(format!(
            "support needs exactly {N_SHOTS} POS annotations, got {}",
            first5.iter().filter(|r| r.is_positive()).count()
        )));
    }
    if patch_hop == 0 {
        return Err(Error::Config("patch_hop must be at least 1".into()));
    }
    let t = timing(gram);
    let duration = t.seconds(gram.n_frames() as f64);
    let events: Vec<(f64, f64)> = first5.iter().map(|r| (r.start, r.end)).collect();
    if let Some(r) = first5.iter().find(|r| r.end > duration) {
        return Err(Error::Episode(format!(
            "support event [{}, {}] ends after the recording ({duration:.3} s)",
            r.start, r.end
        )));
    }
    let end_time = events.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let frames_per_sec = f64::from(gram.sample_rate) / gram.hop_length as f64;
    // compared in frames with a little slack so a span of exactly one patch
    // is not misread as shorter through rounding
    let (short, long): (Vec<_>, Vec<_>) = events
        .iter()
        .partition(|e| (e.1 - e.0) * frames_per_sec < PATCH_LEN as f64 - 1e-6);

    let mut positive = Vec::new();
    let mut negative = Vec::new();
    for start in grid_starts(gram, patch_hop) {
        let span = t.patch_span(start, PATCH_LEN);
        let need = 0.5 * (span.1 - span.0);
        if long.iter().any(|&&e| overlap(span, e) >= need) {
            positive.push(patch_at(gram, start as isize, PATCH_LEN).into_flat());
        } else if span.1 <= end_time && events.iter().all(|&e| overlap(span, e) == 0.0) {
            negative.push(patch_at(gram, start as isize, PATCH_LEN).into_flat());
        }
    }
    for e in short {
        let center = 0.5 * (e.0 + e.1) * frames_per_sec;
        let start = (center - PATCH_LEN as f64 / 2.0).round() as isize;
        positive.push(patch_at(gram, start, PATCH_LEN).into_flat());
    }
    if positive.is_empty() {
        return Err(Error::Episode("support events yielded no positive patches".into()));
    }
    if negative.is_empty() {
        return Err(Error::Episode(format!(
            "no event-free patches before {end_time:.3} s for the negative prototype"
        )));
    }
    Ok(Support {
        positive,
        negative,
        end_time,
    })
}

fn embed_all(model: &EmbeddingModel, xs: &[Vec<f64>]) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((xs.len(), model.out_dim()));
    for (c, chunk) in xs.chunks(EMBED_CHUNK).enumerate() {
        let mut rows = Array2::zeros((chunk.len(), model.in_dim()));
        for (mut row, x) in rows.rows_mut().into_iter().zip(chunk) {
            if x.len() != model.in_dim() {
                return Err(Error::Dimension {
                    expected: model.in_dim(),
                    got: x.len(),
                });
            }
            row.assign(&ndarray::ArrayView1::from(&x[..]));
        }
        let e = model.embed_rows(rows.view())?;
        out.slice_mut(ndarray::s![c * EMBED_CHUNK..c * EMBED_CHUNK + chunk.len(), ..])
            .assign(&e);
    }
    Ok(out)
}

fn mean_row(m: &Array2<f64>) -> Vec<f64> {
    m.mean_axis(ndarray::Axis(0)).expect("nonempty support").to_vec()
}

/// Two-way softmax over negative distances; exactly 0.5 when equidistant.
pub fn positive_probability(d_pos: f64, d_neg: f64) -> f64 {
    1.0 / (1.0 + (d_pos - d_neg).exp())
}

/// Positive probability of each query vector for one model.
pub fn member_probabilities(
    model: &EmbeddingModel,
    kernel: &DistanceKernel,
    support: &Support,
    queries: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if support.positive.is_empty() || support.negative.is_empty() {
        return Err(Error::Episode("support must be nonempty on both sides".into()));
    }
    kernel.validate(model.out_dim())?;
    let c_pos = mean_row(&embed_all(model, &support.positive)?);
    let c_neg = mean_row(&embed_all(model, &support.negative)?);
    let eq = embed_all(model, queries)?;
    eq.rows()
        .into_iter()
        .map(|row| {
            let e = row.as_slice().expect("standard layout");
            Ok(positive_probability(
                kernel.squared_distance(e, &c_pos)?,
                kernel.squared_distance(e, &c_neg)?,
            ))
        })
        .collect()
}

/// Arithmetic mean over members of each query's positive probability.
pub fn ensemble_probabilities(
    members: &[(EmbeddingModel, DistanceKernel)],
    support: &Support,
    queries: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::Config("no models to run".into()));
    }
    let mut sum = vec![0.0; queries.len()];
    for (model, kernel) in members {
        for (s, p) in sum.iter_mut().zip(member_probabilities(model, kernel, support, queries)?) {
            *s += p;
        }
    }
    let n = members.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// `(start_frame, p_pos)` for every grid patch starting at or after the end
/// of the support events.
pub fn frame_probabilities(
    members: &[(EmbeddingModel, DistanceKernel)],
    gram: &MelPcenGram,
    support: &Support,
    config: &DetectionConfig,
) -> Result<Vec<(usize, f64)>> {
    config.validate()?;
    let t = timing(gram);
    let starts: Vec<usize> = grid_starts(gram, config.patch_hop)
        .into_iter()
        .filter(|&s| t.seconds(s as f64) >= support.end_time)
        .collect();
    let queries: Vec<Vec<f64>> = starts
        .iter()
        .map(|&s| patch_at(gram, s as isize, PATCH_LEN).into_flat())
        .collect();
    let probs = ensemble_probabilities(members, support, &queries)?;
    Ok(starts.into_iter().zip(probs).collect())
}

/// Running median of odd width with edge replication.
pub fn median_filter(values: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 || values.is_empty() {
        return values.to_vec();
    }
    let half = (width / 2) as isize;
    let last = values.len() as isize - 1;
    let mut window = Vec::with_capacity(width);
    (0..values.len() as isize)
        .map(|i| {
            window.clear();
            window.extend((i - half..=i + half).map(|j| values[j.clamp(0, last) as usize]));
            window.sort_by(f64::total_cmp);
            window[width / 2]
        })
        .collect()
}

/// Thresholds (optionally median-filtered) probabilities and merges runs
/// of consecutive above-threshold patches into events. When patches overlap
/// an event's end is clipped to the next event's start so events stay
/// disjoint.
pub fn extract_events(probs: &[(usize, f64)], timing: FrameTiming, config: &DetectionConfig) -> Vec<PredictedEvent> {
    let raw: Vec<f64> = probs.iter().map(|p| p.1).collect();
    let smooth = median_filter(&raw, config.median_filter_width);
    let mut runs = Vec::new();
    let mut i = 0;
    while i < probs.len() {
        if smooth[i] < config.prob_threshold {
            i += 1;
            continue;
        }
        let first = i;
        while i < probs.len() && smooth[i] >= config.prob_threshold {
            i += 1;
        }
        let start = timing.seconds(probs[first].0 as f64);
        let end = timing.seconds((probs[i - 1].0 + PATCH_LEN) as f64);
        let score = smooth[first..i].iter().sum::<f64>() / (i - first) as f64;
        runs.push(PredictedEvent { start, end, score });
    }
    let next_starts: Vec<f64> = runs.iter().skip(1).map(|e| e.start).chain([f64::INFINITY]).collect();
    runs.into_iter()
        .zip(next_starts)
        .map(|(e, next)| PredictedEvent { end: e.end.min(next), ..e })
        .filter(|e| e.end - e.start >= config.min_event_duration)
        .collect()
}

/// Full detection for one recording given its annotations.
pub fn detect(
    members: &[(EmbeddingModel, DistanceKernel)],
    gram: &MelPcenGram,
    annotations: &[AnnotationRow],
    config: &DetectionConfig,
) -> Result<Vec<PredictedEvent>> {
    config.validate()?;
    let first5 = first_positive_events(annotations)?;
    let support = build_support(gram, &first5, config.patch_hop)?;
    let probs = frame_probabilities(members, gram, &support, config)?;
    Ok(extract_events(&probs, timing(gram), config))
}

/// Writes `Audiofilename,Starttime,Endtime` rows with six decimals.
pub fn write_predictions<W: Write>(out: &mut W, rows: &[(String, PredictedEvent)]) -> std::io::Result<()> {
    writeln!(out, "Audiofilename,Starttime,Endtime")?;
    for (name, ev) in rows {
        writeln!(out, "{},{:.6},{:.6}", name, ev.start, ev.end)?;
    }
    Ok(())
}

pub fn save_predictions(path: impl AsRef<Path>, rows: &[(String, PredictedEvent)]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_predictions(&mut buf, rows).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
