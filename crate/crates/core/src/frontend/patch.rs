use crate::error::{Error, Result};

use super::MelPcenGram;

/// A fixed-length block of consecutive frames, stored row-major over
/// `(frame, mel bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub start_frame: usize,
    pub n_frames: usize,
    pub n_mels: usize,
    values: Vec<f64>,
}

impl Patch {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.values[frame * self.n_mels + bin]
    }

    /// Flattened feature vector of length `n_frames * n_mels`.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.values
    }

    pub fn unflatten(values: Vec<f64>, n_frames: usize, n_mels: usize, start_frame: usize) -> Result<Self> {
        if values.len() != n_frames * n_mels {
            return Err(Error::Dimension {
                expected: n_frames * n_mels,
                got: values.len(),
            });
        }
        Ok(Self {
            start_frame,
            n_frames,
            n_mels,
            values,
        })
    }
}

/// Patch of `patch_len` frames beginning at `start` (which may be negative);
/// frames outside the gram are zero.
pub fn patch_at(gram: &MelPcenGram, start: isize, patch_len: usize) -> Patch {
    let n_mels = gram.n_mels();
    let mut values = vec![0.0; patch_len * n_mels];
    for i in 0..patch_len {
        let frame = start + i as isize;
        if frame < 0 || frame as usize >= gram.n_frames() {
            continue;
        }
        let row = gram.frames.row(frame as usize);
        for (dst, &v) in values[i * n_mels..(i + 1) * n_mels].iter_mut().zip(row.iter()) {
            *dst = f64::from(v);
        }
    }
    Patch {
        start_frame: start.max(0) as usize,
        n_frames: patch_len,
        n_mels,
        values,
    }
}

/// Cuts the gram into patches starting every `patch_hop` frames. A gram
/// shorter than one patch yields a single right-zero-padded patch.
pub fn make_patches(gram: &MelPcenGram, patch_len: usize, patch_hop: usize) -> Result<Vec<Patch>> {
    if patch_len == 0 || patch_hop == 0 {
        return Err(Error::Config("patch_len and patch_hop must be at least 1".into()));
    }
    if gram.n_frames() < patch_len {
        return Ok(vec![patch_at(gram, 0, patch_len)]);
    }
    Ok((0..=gram.n_frames() - patch_len)
        .step_by(patch_hop)
        .map(|start| patch_at(gram, start as isize, patch_len))
        .collect())
}
