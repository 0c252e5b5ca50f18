use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{read_envelope, write_envelope};

use super::{ClassMap, LabeledPatch, PatchSource};

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    n_patches: usize,
    dim: usize,
    class_names: Vec<String>,
    recordings: Vec<String>,
    start_frames: Vec<usize>,
}

/// Writes a labeled-patch cache: JSON header, `n * dim` little-endian f32
/// features, then `n` little-endian i32 class ids.
pub fn write_patch_cache(path: impl AsRef<Path>, patches: &[LabeledPatch], classes: &ClassMap) -> Result<()> {
    let dim = patches.first().map_or(0, |p| p.features.len());
    if let Some(p) = patches.iter().find(|p| p.features.len() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: p.features.len(),
        });
    }
    let header = CacheHeader {
        n_patches: patches.len(),
        dim,
        class_names: classes.names().to_vec(),
        recordings: patches.iter().map(|p| p.source.recording.clone()).collect(),
        start_frames: patches.iter().map(|p| p.source.start_frame).collect(),
    };
    let mut payload = Vec::with_capacity(patches.len() * (dim + 1) * 4);
    for p in patches {
        for &v in &p.features {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for p in patches {
        payload.extend_from_slice(&(p.class_id as i32).to_le_bytes());
    }
    write_envelope(path.as_ref(), &header, &payload)
}

pub fn read_patch_cache(path: impl AsRef<Path>) -> Result<(Vec<LabeledPatch>, ClassMap)> {
    let path = path.as_ref();
    let (h, payload): (CacheHeader, _) = read_envelope(path)?;
    let bad = |reason: String| Error::Format {
        path: path.into(),
        reason,
    };
    if h.recordings.len() != h.n_patches || h.start_frames.len() != h.n_patches {
        return Err(bad("source arrays disagree with n_patches".into()));
    }
    let feat_bytes = h.n_patches * h.dim * 4;
    if payload.len() != feat_bytes + h.n_patches * 4 {
        return Err(bad(format!("payload is {} bytes", payload.len())));
    }
    let features = crate::frontend::f32_from_le(&payload[..feat_bytes]);
    let classes = ClassMap::from_names(h.class_names);
    let mut out = Vec::with_capacity(h.n_patches);
    for (i, raw) in payload[feat_bytes..].chunks_exact(4).enumerate() {
        let class_id = i32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]);
        if class_id < 0 || class_id as usize > classes.n_classes() {
            return Err(bad(format!("class id {class_id} out of range")));
        }
        out.push(LabeledPatch {
            features: features[i * h.dim..(i + 1) * h.dim].iter().map(|&v| f64::from(v)).collect(),
            class_id: class_id as u32,
            source: PatchSource {
                recording: h.recordings[i].clone(),
                start_frame: h.start_frames[i],
            },
        });
    }
    Ok((out, classes))
}
