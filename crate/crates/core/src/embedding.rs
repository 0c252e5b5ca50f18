//! Single-layer embedding maps: `F(x) = A x` (linear) and
//! `F(x) = 1 / (1 + exp(A x))` (logistic, note the positive exponent).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::DistanceKernel;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Linear,
    Logistic,
}

impl EmbeddingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingKind::Linear => "linear",
            EmbeddingKind::Logistic => "logistic",
        }
    }

    /// Applies the output nonlinearity to a pre-activation.
    #[inline]
    pub fn activate(self, z: f64) -> f64 {
        match self {
            EmbeddingKind::Linear => z,
            EmbeddingKind::Logistic => 1.0 / (1.0 + z.exp()),
        }
    }

    /// Derivative of the output with respect to the pre-activation, written
    /// in terms of the output value.
    #[inline]
    pub fn slope_from_output(self, e: f64) -> f64 {
        match self {
            EmbeddingKind::Linear => 1.0,
            EmbeddingKind::Logistic => -e * (1.0 - e),
        }
    }
}

impl std::str::FromStr for EmbeddingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(EmbeddingKind::Linear),
            "logistic" => Ok(EmbeddingKind::Logistic),
            other => Err(Error::Config(format!("unknown embedding kind {other:?}"))),
        }
    }
}

/// Trainable weight matrix `A` of shape `(out_dim, in_dim)` plus its output
/// nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub kind: EmbeddingKind,
    weights: Array2<f64>,
}

impl EmbeddingModel {
    /// Uniform fan-in initialization on `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`.
    pub fn init(kind: EmbeddingKind, out_dim: usize, in_dim: usize, rng: &mut Rng) -> Result<Self> {
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::Config(format!(
                "embedding dimensions must be positive (out_dim {out_dim}, in_dim {in_dim})"
            )));
        }
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        Ok(Self { kind, weights })
    }

    pub fn from_weights(kind: EmbeddingKind, weights: Array2<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("empty weight matrix".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("weight matrix has non-finite entries".into()));
        }
        Ok(Self { kind, weights })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.in_dim() {
            return Err(Error::Dimension {
                expected: self.in_dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let z: Array1<f64> = self.weights.dot(&ArrayView1::from(x));
        Ok(z.iter().map(|&v| self.kind.activate(v)).collect())
    }

    /// `embed` applied to each input in order.
    pub fn embed_batch<X: AsRef<[f64]>>(&self, xs: &[X]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.embed(x.as_ref())).collect()
    }

    /// Embeds every row of `xs` with one matrix product. Agrees with
    /// [`embed`](Self::embed) up to summation-order rounding.
    pub fn embed_rows(&self, xs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(xs.ncols())?;
        let mut out = xs.dot(&self.weights.t());
        out.mapv_inplace(|v| self.kind.activate(v));
        Ok(out)
    }
}

/// Two or more embedding models, each paired with its own distance kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    members: Vec<(EmbeddingModel, DistanceKernel)>,
}

impl EnsembleModel {
    pub fn new(members: Vec<(EmbeddingModel, DistanceKernel)>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::Config(format!(
                "an ensemble needs at least two members, got {}",
                members.len()
            )));
        }
        let in_dim = members[0].0.in_dim();
        if let Some((m, _)) = members.iter().find(|(m, _)| m.in_dim() != in_dim) {
            return Err(Error::Dimension {
                expected: in_dim,
                got: m.in_dim(),
            });
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[(EmbeddingModel, DistanceKernel)] {
        &self.members
    }

    pub fn in_dim(&self) -> usize {
        self.members[0].0.in_dim()
    }
}
