//! Feature file envelope: one compact JSON header line, a newline, then a
//! little-endian binary payload.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::MelPcenGram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub n_frames: usize,
    pub n_mels: usize,
    pub hop_length: usize,
    pub sample_rate: u32,
    pub source_path: String,
}

pub(crate) fn write_envelope<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> Result<()> {
    let mut bytes = serde_json::to_vec(header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    bytes.push(b'\n');
    bytes.extend_from_slice(payload);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_envelope<H: for<'de> Deserialize<'de>>(path: &Path) -> Result<(H, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Format {
        path: path.into(),
        reason: "missing header terminator".into(),
    })?;
    let header = serde_json::from_slice(&bytes[..split]).map_err(|e| Error::Format {
        path: path.into(),
        reason: format!("bad header: {e}"),
    })?;
    Ok((header, bytes[split + 1..].to_vec()))
}

pub(crate) fn f32_le_bytes<'a>(values: impl IntoIterator<Item = &'a f32>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn f32_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn write_features(path: impl AsRef<Path>, gram: &MelPcenGram) -> Result<()> {
    let header = FeatureHeader {
        n_frames: gram.n_frames(),
        n_mels: gram.n_mels(),
        hop_length: gram.hop_length,
        sample_rate: gram.sample_rate,
        source_path: gram.source_path.clone(),
    };
    write_envelope(path.as_ref(), &header, &f32_le_bytes(gram.frames.iter()))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<MelPcenGram> {
    let path = path.as_ref();
    let (header, payload): (FeatureHeader, _) = read_envelope(path)?;
    let expected = header.n_frames * header.n_mels * 4;
    if payload.len() != expected {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("payload is {} bytes, header implies {expected}", payload.len()),
        });
    }
    let frames = Array2::from_shape_vec((header.n_frames, header.n_mels), f32_from_le(&payload))
        .expect("length checked");
    Ok(MelPcenGram {
        frames,
        hop_length: header.hop_length,
        sample_rate: header.sample_rate,
        source_path: header.source_path,
    })
}
