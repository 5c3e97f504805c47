use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Mlp, MlpSpec};
use super::optim::OptimizerState;
use crate::autodiff::{HasParams, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Flat weights of one model. `spec` is present for [`Mlp`]s and absent for
/// bare layers such as a fusion head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub name: String,
    pub spec: Option<MlpSpec>,
    pub weights: Vec<NamedArray>,
}

impl ModelRecord {
    pub fn capture(name: &str, spec: Option<&MlpSpec>, model: &impl HasParams) -> Self {
        ModelRecord {
            name: name.to_string(),
            spec: spec.cloned(),
            weights: model
                .params()
                .iter()
                .map(|p| NamedArray {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Copies the stored weights into `model`, checking names and shapes.
    pub fn restore_into(&self, model: &mut impl HasParams) -> Result<()> {
        let mut params = model.params_mut();
        if params.len() != self.weights.len() {
            return Err(Error::Malformed(format!(
                "checkpoint `{}` has {} arrays, model expects {}",
                self.name,
                self.weights.len(),
                params.len()
            )));
        }
        for (p, w) in params.iter_mut().zip(&self.weights) {
            if p.value.shape() != w.shape.as_slice() || p.name != w.name {
                return Err(Error::Malformed(format!(
                    "checkpoint array `{}` {:?} does not match parameter `{}` {:?}",
                    w.name,
                    w.shape,
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(w.shape.clone(), w.values.clone())?;
        }
        Ok(())
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        let spec = self
            .spec
            .clone()
            .ok_or_else(|| Error::Malformed(format!("record `{}` has no layer spec", self.name)))?;
        let mut mlp = Mlp::new(spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        self.restore_into(&mut mlp)?;
        Ok(mlp)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub models: Vec<ModelRecord>,
    pub optimizers: Vec<(String, OptimizerState)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            models: vec![],
            optimizers: vec![],
        }
    }

    pub fn model(&self, name: &str) -> Result<&ModelRecord> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Malformed(format!("checkpoint has no model `{name}`")))
    }

    pub fn optimizer(&self, name: &str) -> Option<&OptimizerState> {
        self.optimizers.iter().find(|(n, _)| n == name).map(|(_, o)| o)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Malformed(format!(
                "unsupported checkpoint format_version {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }
}

impl Default for Checkpoint {
    fn default() -> Self {
        Checkpoint::new()
    }
}
