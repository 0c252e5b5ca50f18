use std::collections::BTreeMap;

use crate::error::Result;
use crate::frontend::{make_patches, MelPcenGram, Patch, PATCH_LEN};

use super::{AnnotationRow, Label};

/// Global mapping from class name to id. Id 0 is background; event classes
/// are numbered from 1 in name order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassMap {
    names: Vec<String>,
}

impl ClassMap {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names: Vec<String> = names.into_iter().map(Into::into).collect();
        names.sort();
        names.dedup();
        Self { names }
    }

    /// Every class column that carries at least one POS cell.
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a AnnotationRow>) -> Self {
        Self::from_names(
            rows.into_iter()
                .flat_map(|r| r.positive_classes().map(str::to_string).collect::<Vec<_>>()),
        )
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.names
            .binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|i| i as u32 + 1)
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        match id {
            0 => Some("background"),
            _ => self.names.get(id as usize - 1).map(String::as_str),
        }
    }

    /// Number of event classes (excluding background).
    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Where a labeled patch came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PatchSource {
    pub recording: String,
    pub start_frame: usize,
}

/// A flattened patch with its class id (0 = background).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatch {
    pub features: Vec<f64>,
    pub class_id: u32,
    pub source: PatchSource,
}

/// Frame-to-seconds conversion for a gram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTiming {
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl FrameTiming {
    pub fn seconds(&self, frames: f64) -> f64 {
        frames * self.hop_length as f64 / f64::from(self.sample_rate)
    }

    /// `[start, end)` of a patch in seconds.
    pub fn patch_span(&self, start_frame: usize, patch_len: usize) -> (f64, f64) {
        (
            self.seconds(start_frame as f64),
            self.seconds((start_frame + patch_len) as f64),
        )
    }
}

pub(crate) fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

/// Assigns each patch the event class it overlaps for at least
/// `overlap_frac` of its duration, or background. Patches that qualify for
/// no class but touch an UNK span are dropped.
pub fn label_patches(
    patches: &[Patch],
    rows: &[AnnotationRow],
    classes: &ClassMap,
    timing: FrameTiming,
    overlap_frac: f64,
    recording: &str,
) -> Vec<LabeledPatch> {
    let mut events: Vec<(u32, (f64, f64))> = Vec::new();
    let mut unknown: Vec<(f64, f64)> = Vec::new();
    for row in rows {
        for (name, label) in &row.labels {
            match label {
                Label::Pos => {
                    if let Some(id) = classes.id(name) {
                        events.push((id, (row.start, row.end)));
                    }
                }
                Label::Unk => unknown.push((row.start, row.end)),
                Label::Neg => {}
            }
        }
    }

    patches
        .iter()
        .filter_map(|patch| {
            let span = timing.patch_span(patch.start_frame, patch.n_frames);
            let need = overlap_frac * (span.1 - span.0);
            let mut best: BTreeMap<u32, f64> = BTreeMap::new();
            for &(id, ev) in &events {
                let ov = overlap(span, ev);
                let slot = best.entry(id).or_insert(0.0);
                *slot = slot.max(ov);
            }
            // greatest overlap wins, lowest id on ties (BTreeMap iterates ascending)
            let mut class_id = 0;
            let mut best_ov = f64::NEG_INFINITY;
            for (&id, &ov) in &best {
                if ov >= need && ov > best_ov {
                    class_id = id;
                    best_ov = ov;
                }
            }
            if class_id == 0 && unknown.iter().any(|&u| overlap(span, u) > 0.0) {
                return None;
            }
            Some(LabeledPatch {
                features: patch.flatten(),
                class_id,
                source: PatchSource {
                    recording: recording.to_string(),
                    start_frame: patch.start_frame,
                },
            })
        })
        .collect()
}

/// Cuts one recording's gram into patches and labels them.
pub fn recording_patches(
    gram: &MelPcenGram,
    rows: &[AnnotationRow],
    classes: &ClassMap,
    patch_hop: usize,
    overlap_frac: f64,
    recording: &str,
) -> Result<Vec<LabeledPatch>> {
    let patches = make_patches(gram, PATCH_LEN, patch_hop)?;
    let timing = FrameTiming {
        hop_length: gram.hop_length,
        sample_rate: gram.sample_rate,
    };
    Ok(label_patches(&patches, rows, classes, timing, overlap_frac, recording))
}
