use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::moments::{estimate_moments, GaussianMoments};
use crate::autodiff::{Graph, HasParams, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Binding, Mlp, MlpSpec, OptimizerKind, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![32, 32],
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
        }
    }
}

/// Small classifier standing in for a pretrained Inception network.
///
/// Its penultimate activations are the feature map for FID and its softmax
/// output is p(y|x) for the Inception and Mode scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub net: Mlp,
    pub classes: usize,
}

/// Empirical label distribution p*(y) over `classes` classes.
pub fn label_histogram(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut h = vec![0.0; classes];
    for &l in labels {
        if l < classes {
            h[l] += 1.0;
        }
    }
    let n = labels.len().max(1) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

impl FeatureExtractor {
    pub fn train<R: Rng + ?Sized>(
        x: &Tensor,
        labels: &[usize],
        classes: usize,
        config: &ClassifierConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let n = x.rows();
        if n != labels.len() || n == 0 {
            return Err(Error::contract("classifier: samples and labels differ in length"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::contract(format!("label {bad} outside {classes} classes")));
        }
        let spec = MlpSpec::relu(x.cols(), &config.hidden, classes);
        let mut net = Mlp::new(spec, rng)?;
        let mut opt = OptimizerState::new(
            OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            config.learning_rate,
        )?;
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(config.batch_size.max(1)) {
                let xb = x.select_rows(chunk)?;
                let mut onehot = vec![0.0; chunk.len() * classes];
                for (r, &i) in chunk.iter().enumerate() {
                    onehot[r * classes + labels[i]] = 1.0;
                }
                let mut g = Graph::new();
                let xv = g.constant(xb);
                let logits = net.forward(&mut g, xv, Binding::Trainable)?;
                let logp = g.log_softmax_rows(logits)?;
                let t = g.constant(Tensor::new(vec![chunk.len(), classes], onehot)?);
                let picked = g.mul(logp, t)?;
                let s = g.sum(picked);
                let loss = g.scale(s, -1.0 / chunk.len() as f64);
                g.backward(loss)?;
                let grads = g.grads_for(&net.params());
                opt.step(&mut net.params_mut(), &grads)?;
            }
        }
        Ok(FeatureExtractor { net, classes })
    }

    /// Softmax label distributions p(y|x), one row per sample.
    pub fn label_distributions(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let logits = self.net.forward(&mut g, xv, Binding::Frozen)?;
        let p = g.softmax_rows(logits)?;
        Ok(g.value(p).clone())
    }

    /// Penultimate-layer activations φ(x).
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = self.net.forward_features(&mut g, xv, Binding::Frozen)?;
        Ok(g.value(out.features).clone())
    }

    pub fn moments(&self, x: &Tensor) -> Result<GaussianMoments> {
        estimate_moments(&self.features(x)?)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.label_distributions(x)?;
        Ok(p
            .data()
            .chunks(self.classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}
