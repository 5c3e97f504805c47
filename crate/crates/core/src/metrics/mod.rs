//! Inception Score, Mode Score and Fréchet distance.
//!
//! All three are computed against a [`FeatureExtractor`], a small classifier
//! trained on the labelled toy data. FID uses its penultimate activations;
//! the two scores use its softmax output.

mod extractor;
mod fid;
mod moments;
mod scores;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use extractor::{label_histogram, ClassifierConfig, FeatureExtractor};
pub use fid::{fid, sqrtm_psd, FidResult, MeanTerm};
pub use moments::{estimate_moments, GaussianMoments};
pub use scores::{inception_score, kl_divergence, mode_score, MODE_SCORE_SMOOTHING};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// On-disk label distributions: `rows × classes` probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDistributions {
    pub rows: usize,
    pub classes: usize,
    pub probabilities: Vec<Vec<f64>>,
}

impl LabelDistributions {
    pub fn from_tensor(p: &Tensor) -> Self {
        LabelDistributions {
            rows: p.rows(),
            classes: p.cols(),
            probabilities: p.to_rows(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        if self.probabilities.len() != self.rows
            || self.probabilities.iter().any(|r| r.len() != self.classes)
        {
            return Err(Error::Malformed(format!(
                "label distributions do not match declared {}×{}",
                self.rows, self.classes
            )));
        }
        Tensor::from_rows(&self.probabilities)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let d: LabelDistributions = serde_json::from_str(&text)?;
        d.to_tensor()?;
        Ok(d)
    }
}

/// IS, MS and FID for one batch of generated samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub inception_score: f64,
    pub mode_score: f64,
    pub fid: f64,
}

/// Evaluates all three metrics of `generated` against precomputed real
/// moments and the data label distribution.
pub fn evaluate(
    extractor: &FeatureExtractor,
    generated: &Tensor,
    real_moments: &GaussianMoments,
    data_labels: &[f64],
    mean_term: MeanTerm,
) -> Result<MetricSet> {
    let p = extractor.label_distributions(generated)?;
    let gm = extractor.moments(generated)?;
    Ok(MetricSet {
        inception_score: inception_score(&p)?,
        mode_score: mode_score(&p, data_labels)?,
        fid: fid(real_moments, &gm, mean_term)?.value,
    })
}
