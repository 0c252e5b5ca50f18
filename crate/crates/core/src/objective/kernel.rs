use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared distance between embeddings, written through a kernel as
/// `K(x,x) + K(y,y) - 2 K(x,y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum DistanceKernel {
    /// `K(x,y) = x . y`, giving the plain squared Euclidean distance.
    Euclidean,
    /// `K(x,y) = x^T L L^T y` with `L` unit lower triangular.
    Cholesky { l: Array2<f64> },
    /// `K(x,y) = exp(-gamma |x-y|^2)`, giving `2 - 2 exp(-gamma |x-y|^2)`.
    Rbf { gamma: f64 },
}

impl DistanceKernel {
    /// Cholesky kernel starting from `L = I`.
    pub fn cholesky_identity(dim: usize) -> Self {
        DistanceKernel::Cholesky { l: Array2::eye(dim) }
    }

    pub fn cholesky(l: Array2<f64>) -> Result<Self> {
        Ok(DistanceKernel::Cholesky {
            l: project_cholesky(&l)?,
        })
    }

    pub fn rbf(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("RBF gamma must be positive, got {gamma}")));
        }
        Ok(DistanceKernel::Rbf { gamma })
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            DistanceKernel::Euclidean => "euclidean",
            DistanceKernel::Cholesky { .. } => "cholesky",
            DistanceKernel::Rbf { .. } => "rbf",
        }
    }

    /// Checks the structural invariants against an embedding dimension.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            DistanceKernel::Euclidean => Ok(()),
            DistanceKernel::Rbf { gamma } => Self::rbf(*gamma).map(|_| ()),
            DistanceKernel::Cholesky { l } => {
                if l.dim() != (dim, dim) {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: l.nrows(),
                    });
                }
                for ((i, j), &v) in l.indexed_iter() {
                    let ok = match i.cmp(&j) {
                        std::cmp::Ordering::Less => v == 0.0,
                        std::cmp::Ordering::Equal => v == 1.0,
                        std::cmp::Ordering::Greater => v.is_finite(),
                    };
                    if !ok {
                        return Err(Error::Domain(format!(
                            "Cholesky factor is not unit lower triangular at ({i}, {j})"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// The kernel value `K(x, y)`.
    pub fn kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        Ok(match self {
            DistanceKernel::Euclidean => dot(x, y),
            DistanceKernel::Cholesky { l } => {
                if l.nrows() != x.len() {
                    return Err(Error::Dimension {
                        expected: l.nrows(),
                        got: x.len(),
                    });
                }
                let lx = l.t().dot(&ArrayView1::from(x));
                let ly = l.t().dot(&ArrayView1::from(y));
                lx.dot(&ly)
            }
            DistanceKernel::Rbf { gamma } => (-gamma * plain_sq(x, y)).exp(),
        })
    }

    /// Squared distance `d(x, y)`, evaluated in a cancellation-free form.
    pub fn squared_distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        let d = match self {
            DistanceKernel::Euclidean => plain_sq(x, y),
            DistanceKernel::Cholesky { l } => {
                if l.nrows() != x.len() {
                    return Err(Error::Dimension {
                        expected: l.nrows(),
                        got: x.len(),
                    });
                }
                let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                let w = l.t().dot(&ArrayView1::from(&diff[..]));
                w.dot(&w)
            }
            DistanceKernel::Rbf { gamma } => rbf_distance(*gamma, plain_sq(x, y)),
        };
        if !d.is_finite() {
            return Err(Error::Numerical(format!("non-finite {} distance", self.variant_name())));
        }
        Ok(d)
    }
}

#[inline]
pub(crate) fn rbf_distance(gamma: f64, sq: f64) -> f64 {
    2.0 - 2.0 * (-gamma * sq).exp()
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    Ok(())
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn plain_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Zeroes the strict upper triangle and sets the diagonal to one.
pub fn project_cholesky(l: &Array2<f64>) -> Result<Array2<f64>> {
    if l.nrows() != l.ncols() {
        return Err(Error::Domain(format!(
            "Cholesky factor must be square, got {}x{}",
            l.nrows(),
            l.ncols()
        )));
    }
    let mut out = l.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        if j > i {
            *v = 0.0;
        } else if i == j {
            *v = 1.0;
        }
    }
    Ok(out)
}

/// Checkpoint form: `{"variant", "gamma"?, "L"?}` with `L` row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct KernelDoc {
    variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    l: Option<Vec<f64>>,
}

impl From<&DistanceKernel> for KernelDoc {
    fn from(k: &DistanceKernel) -> Self {
        let (gamma, l) = match k {
            DistanceKernel::Euclidean => (None, None),
            DistanceKernel::Rbf { gamma } => (Some(*gamma), None),
            DistanceKernel::Cholesky { l } => (None, Some(l.iter().copied().collect())),
        };
        KernelDoc {
            variant: k.variant_name().to_string(),
            gamma,
            l,
        }
    }
}

impl KernelDoc {
    pub(crate) fn into_kernel(self, out_dim: usize) -> Result<DistanceKernel> {
        let bad = |m: String| Error::Checkpoint(m);
        let kernel = match self.variant.as_str() {
            "euclidean" => DistanceKernel::Euclidean,
            "rbf" => DistanceKernel::rbf(self.gamma.ok_or_else(|| bad("rbf kernel without gamma".into()))?)
                .map_err(|e| bad(e.to_string()))?,
            "cholesky" => {
                let values = self.l.ok_or_else(|| bad("cholesky kernel without L".into()))?;
                let l = Array2::from_shape_vec((out_dim, out_dim), values)
                    .map_err(|_| bad(format!("L must hold {out_dim}x{out_dim} values")))?;
                DistanceKernel::Cholesky { l }
            }
            other => return Err(bad(format!("unknown kernel variant {other:?}"))),
        };
        kernel.validate(out_dim).map_err(|e| bad(e.to_string()))?;
        Ok(kernel)
    }
}
