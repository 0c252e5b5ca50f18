//! Glue shared by the command-line tools and end-to-end tests: WAV to
//! features, annotated recordings to a labeled pool.

use std::path::Path;

use crate::corpus::{recording_patches, AnnotationRow, ClassMap, LabeledPatch};
use crate::error::Result;
use crate::frontend::{extract_features, load_audio, MelPcenGram, SpectrogramConfig};

/// Default fraction of a patch that must lie inside an event to carry its label.
pub const DEFAULT_OVERLAP_FRAC: f64 = 0.5;

/// Loads a WAV file and computes its PCEN mel gram.
pub fn extract_file(path: impl AsRef<Path>, config: &SpectrogramConfig) -> Result<MelPcenGram> {
    let clip = load_audio(path)?;
    extract_features(&clip, config)
}

/// A recording's features with its annotation rows.
#[derive(Debug, Clone)]
pub struct AnnotatedRecording {
    pub name: String,
    pub gram: MelPcenGram,
    pub rows: Vec<AnnotationRow>,
}

/// Labels the patches of every recording against one shared class map
/// built from all rows.
pub fn labeled_pool(
    recordings: &[AnnotatedRecording],
    patch_hop: usize,
    overlap_frac: f64,
) -> Result<(Vec<LabeledPatch>, ClassMap)> {
    let classes = ClassMap::from_rows(recordings.iter().flat_map(|r| r.rows.iter()));
    let mut pool = Vec::new();
    for r in recordings {
        pool.extend(recording_patches(&r.gram, &r.rows, &classes, patch_hop, overlap_frac, &r.name)?);
    }
    Ok((pool, classes))
}
