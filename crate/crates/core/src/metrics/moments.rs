use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Empirical mean and unbiased covariance of a feature distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub dim: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    /// `dim × dim`, row-major rows.
    pub cov: Vec<Vec<f64>>,
}

impl GaussianMoments {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>, count: usize) -> Result<Self> {
        let m = GaussianMoments {
            dim: mean.len(),
            count,
            mean,
            cov,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.mean.len() != self.dim {
            return Err(Error::Malformed(format!(
                "moments: mean has {} entries for dim {}",
                self.mean.len(),
                self.dim
            )));
        }
        if self.cov.len() != self.dim || self.cov.iter().any(|r| r.len() != self.dim) {
            return Err(Error::Malformed(format!(
                "moments: covariance is not {0}×{0}",
                self.dim
            )));
        }
        for i in 0..self.dim {
            for j in 0..i {
                let (a, b) = (self.cov[i][j], self.cov[j][i]);
                if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Malformed(format!(
                        "moments: covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn cov_matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.dim, self.dim, |i, j| self.cov[i][j])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let m: GaussianMoments = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Mean and unbiased covariance of the rows of `features` (n × d),
/// accumulated in one streaming pass.
pub fn estimate_moments(features: &Tensor) -> Result<GaussianMoments> {
    let (n, d) = match features.shape() {
        [n, d] => (*n, *d),
        [d] => (1, *d),
        s => return Err(Error::contract(format!("features must be a matrix, got {s:?}"))),
    };
    if n < 2 {
        return Err(Error::contract(format!(
            "estimate_moments needs at least 2 samples, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    let mut comoment = vec![0.0; d * d];
    let mut delta = vec![0.0; d];
    for (k, row) in features.data().chunks(d).enumerate() {
        let count = (k + 1) as f64;
        for j in 0..d {
            delta[j] = row[j] - mean[j];
            mean[j] += delta[j] / count;
        }
        for i in 0..d {
            let after = row[i] - mean[i];
            for j in 0..d {
                comoment[i * d + j] += delta[j] * after;
            }
        }
    }
    let denom = (n - 1) as f64;
    let cov = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| 0.5 * (comoment[i * d + j] + comoment[j * d + i]) / denom)
                .collect()
        })
        .collect();
    Ok(GaussianMoments {
        dim: d,
        count: n,
        mean,
        cov,
    })
}
