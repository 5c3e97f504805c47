use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attributes::{ring_centers, AttributeOracle, ImageOracle, PlaneOracle};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Desk-scale data distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Gaussians centred on a circle.
    Ring { modes: usize, radius: f64, sigma: f64 },
    /// Gaussians on a `per_side × per_side` lattice spanning `[-extent, extent]²`.
    Grid { per_side: usize, extent: f64, sigma: f64 },
    /// Square grayscale images: a class prototype plus pixel noise, in `[-1, 1]`.
    Images { side: usize, classes: usize, noise: f64 },
}

impl DatasetSpec {
    pub fn ring8() -> Self {
        DatasetSpec::Ring {
            modes: 8,
            radius: 2.0,
            sigma: 0.02,
        }
    }

    pub fn grid25() -> Self {
        DatasetSpec::Grid {
            per_side: 5,
            extent: 4.0,
            sigma: 0.05,
        }
    }

    pub fn images8() -> Self {
        DatasetSpec::Images {
            side: 8,
            classes: 4,
            noise: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DatasetSpec::Ring { modes, radius, sigma } => modes >= 1 && radius > 0.0 && sigma > 0.0,
            DatasetSpec::Grid { per_side, extent, sigma } => per_side >= 2 && extent > 0.0 && sigma > 0.0,
            DatasetSpec::Images { side, classes, noise } => {
                side >= 4 && (1..=PROTOTYPE_COUNT).contains(&classes) && noise >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("dataset", format!("invalid dataset spec {self:?}")))
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            DatasetSpec::Ring { .. } | DatasetSpec::Grid { .. } => 2,
            DatasetSpec::Images { side, .. } => side * side,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            DatasetSpec::Ring { modes, .. } => modes,
            DatasetSpec::Grid { per_side, .. } => per_side * per_side,
            DatasetSpec::Images { classes, .. } => classes,
        }
    }

    /// Per-class noise scale.
    pub fn sigma(&self) -> f64 {
        match *self {
            DatasetSpec::Ring { sigma, .. } | DatasetSpec::Grid { sigma, .. } => sigma,
            DatasetSpec::Images { noise, .. } => noise,
        }
    }

    /// Class centers: mode locations, or image prototypes.
    pub fn centers(&self) -> Vec<Vec<f64>> {
        match *self {
            DatasetSpec::Ring { modes, radius, .. } => {
                ring_centers(modes, radius).into_iter().map(|c| c.to_vec()).collect()
            }
            DatasetSpec::Grid { per_side, extent, .. } => {
                let step = 2.0 * extent / (per_side - 1) as f64;
                let mut out = Vec::with_capacity(per_side * per_side);
                for i in 0..per_side {
                    for j in 0..per_side {
                        out.push(vec![-extent + i as f64 * step, -extent + j as f64 * step]);
                    }
                }
                out
            }
            DatasetSpec::Images { side, classes, .. } => (0..classes).map(|c| prototype(c, side)).collect(),
        }
    }

    /// The attribute oracle matched to this distribution.
    pub fn oracle(&self) -> Result<AttributeOracle> {
        self.validate()?;
        let centers = self.centers();
        Ok(match *self {
            DatasetSpec::Images { side, .. } => AttributeOracle::Image(ImageOracle::new(side, centers)?),
            _ => AttributeOracle::Plane(PlaneOracle::new(centers.iter().map(|c| [c[0], c[1]]).collect())?),
        })
    }
}

impl DatasetSpec {
    /// Uniform draws over the box the oracle is defined on, most of them far
    /// from the data.
    pub fn sample_domain<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        let half = match self.oracle()? {
            AttributeOracle::Plane(p) => p.extent,
            AttributeOracle::Image(_) => 1.0,
        };
        let data = (0..n * self.dim()).map(|_| rng.random_range(-half..=half)).collect();
        Tensor::new(vec![n, self.dim()], data)
    }
}

const PROTOTYPE_COUNT: usize = 6;

/// Deterministic class templates: horizontal stripes, centred blob,
/// top-lit gradient, checkerboard, vertical stripes, ring.
fn prototype(class: usize, side: usize) -> Vec<f64> {
    let s = side as f64;
    let mut out = Vec::with_capacity(side * side);
    for r in 0..side {
        for c in 0..side {
            let (y, x) = ((r as f64 + 0.5) / s - 0.5, (c as f64 + 0.5) / s - 0.5);
            let v = match class {
                0 => if r % 2 == 0 { 0.8 } else { -0.8 },
                1 => 1.6 * (-(x * x + y * y) / 0.04).exp() - 0.8,
                2 => 0.8 - 1.6 * (r as f64 / (s - 1.0)),
                3 => if (r + c) % 2 == 0 { 0.8 } else { -0.8 },
                4 => if c % 2 == 0 { 0.8 } else { -0.8 },
                _ => if ((x * x + y * y).sqrt() - 0.3).abs() < 0.1 { 0.8 } else { -0.8 },
            };
            out.push(v);
        }
    }
    out
}

/// Labeled samples from a [`DatasetSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub samples: Tensor,
    pub labels: Vec<usize>,
}

/// Draws `n` samples with labels stratified as evenly as `n` allows.
pub fn generate_dataset<R: Rng + ?Sized>(spec: &DatasetSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::config("samples", "must be at least 1"));
    }
    let centers = spec.centers();
    let k = centers.len();
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(rng);
    let noise = Normal::new(0.0, spec.sigma()).map_err(|e| Error::config("sigma", e.to_string()))?;
    let d = spec.dim();
    let mut data = Vec::with_capacity(n * d);
    for &l in &labels {
        for &c in &centers[l] {
            let v = c + noise.sample(rng);
            data.push(if matches!(spec, DatasetSpec::Images { .. }) { v.clamp(-1.0, 1.0) } else { v });
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        samples: Tensor::new(vec![n, d], data)?,
        labels,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n - test` rows for training, the rest for testing.
    pub fn split(&self, test: usize) -> Result<(Dataset, Dataset)> {
        let n = self.len();
        if test == 0 || test >= n {
            return Err(Error::config("test_samples", format!("must lie in 1..{n}")));
        }
        let part = |start: usize, len: usize| -> Result<Dataset> {
            Ok(Dataset {
                spec: self.spec.clone(),
                samples: self.samples.slice_rows(start, len)?,
                labels: self.labels[start..start + len].to_vec(),
            })
        };
        Ok((part(0, n - test)?, part(n - test, test)?))
    }

    pub fn image_ids(&self) -> Vec<String> {
        (0..self.len()).map(|i| format!("img{i:05}")).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let d: Dataset = serde_json::from_reader(std::io::BufReader::new(f))?;
        d.spec.validate()?;
        if d.samples.rows() != d.labels.len() || d.samples.cols() != d.spec.dim() {
            return Err(Error::Malformed("dataset samples, labels and spec disagree".into()));
        }
        Ok(d)
    }
}
