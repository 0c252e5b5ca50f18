//! JSON checkpoints. Floats are written in shortest round-trip form, so a
//! load reproduces every parameter bit for bit.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingKind, EmbeddingModel, EnsembleModel};
use crate::error::{Error, Result};
use crate::objective::{DistanceKernel, KernelDoc};

pub const FORMAT_VERSION: u32 = 1;

/// A trained single model or ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Single {
        model: EmbeddingModel,
        kernel: DistanceKernel,
    },
    Ensemble(EnsembleModel),
}

impl Checkpoint {
    /// The `(model, kernel)` pairs used at inference; one for a single model.
    pub fn members(&self) -> Vec<(EmbeddingModel, DistanceKernel)> {
        match self {
            Checkpoint::Single { model, kernel } => vec![(model.clone(), kernel.clone())],
            Checkpoint::Ensemble(e) => e.members().to_vec(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDoc {
    kind: String,
    out_dim: usize,
    in_dim: usize,
    kernel: KernelDoc,
    #[serde(rename = "A")]
    weights: Vec<f64>,
    format_version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleDoc {
    kind: String,
    members: Vec<ModelDoc>,
    format_version: u32,
}

impl ModelDoc {
    fn new(model: &EmbeddingModel, kernel: &DistanceKernel) -> Self {
        ModelDoc {
            kind: model.kind.as_str().to_string(),
            out_dim: model.out_dim(),
            in_dim: model.in_dim(),
            kernel: KernelDoc::from(kernel),
            weights: model.weights().iter().copied().collect(),
            format_version: FORMAT_VERSION,
        }
    }

    fn into_parts(self) -> Result<(EmbeddingModel, DistanceKernel)> {
        let bad = |m: String| Error::Checkpoint(m);
        check_version(self.format_version)?;
        let kind: EmbeddingKind = self.kind.parse().map_err(|e: Error| bad(e.to_string()))?;
        let weights = Array2::from_shape_vec((self.out_dim, self.in_dim), self.weights)
            .map_err(|_| bad(format!("A must hold {}x{} values", self.out_dim, self.in_dim)))?;
        let model = EmbeddingModel::from_weights(kind, weights).map_err(|e| bad(e.to_string()))?;
        let kernel = self.kernel.into_kernel(self.out_dim)?;
        Ok((model, kernel))
    }
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {v} (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

pub fn checkpoint_to_string(checkpoint: &Checkpoint) -> String {
    let json = match checkpoint {
        Checkpoint::Single { model, kernel } => serde_json::to_string(&ModelDoc::new(model, kernel)),
        Checkpoint::Ensemble(e) => serde_json::to_string(&EnsembleDoc {
            kind: "ensemble".into(),
            members: e.members().iter().map(|(m, k)| ModelDoc::new(m, k)).collect(),
            format_version: FORMAT_VERSION,
        }),
    };
    json.expect("checkpoint documents always serialize")
}

pub fn checkpoint_from_str(text: &str) -> Result<Checkpoint> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
    let version = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::Checkpoint("missing format_version".into()))?;
    check_version(u32::try_from(version).unwrap_or(u32::MAX))?;
    let malformed = |e: serde_json::Error| Error::Checkpoint(format!("malformed checkpoint: {e}"));
    if value.get("kind").and_then(serde_json::Value::as_str) == Some("ensemble") {
        let doc: EnsembleDoc = serde_json::from_value(value).map_err(malformed)?;
        let members = doc
            .members
            .into_iter()
            .map(ModelDoc::into_parts)
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint::Ensemble(
            EnsembleModel::new(members).map_err(|e| Error::Checkpoint(e.to_string()))?,
        ))
    } else {
        let doc: ModelDoc = serde_json::from_value(value).map_err(malformed)?;
        let (model, kernel) = doc.into_parts()?;
        Ok(Checkpoint::Single { model, kernel })
    }
}

pub fn write_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_string(checkpoint)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}

pub fn save_checkpoint(model: &EmbeddingModel, kernel: &DistanceKernel, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(
        &Checkpoint::Single {
            model: model.clone(),
            kernel: kernel.clone(),
        },
        path,
    )
}

/// Loads a single-model checkpoint.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EmbeddingModel, DistanceKernel)> {
    match read_checkpoint(path)? {
        Checkpoint::Single { model, kernel } => Ok((model, kernel)),
        Checkpoint::Ensemble(_) => Err(Error::Checkpoint(
            "expected a single-model checkpoint, found an ensemble".into(),
        )),
    }
}
