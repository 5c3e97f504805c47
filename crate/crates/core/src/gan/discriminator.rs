use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attributes::ATTRIBUTE_COUNT;
use crate::autodiff::{Graph, HasParams, Param, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Binding, LinearLayer, Mlp, MlpSpec};

/// Where the discriminator's attribute input comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Plain discriminator, no attributes.
    None,
    /// Outputs of a frozen attribute net on the same sample.
    AttributeNet,
    /// A fresh standard-normal vector per sample, independent of it.
    RandomNoise,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::None, FusionMode::AttributeNet, FusionMode::RandomNoise];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::None => "baseline",
            FusionMode::AttributeNet => "attribute_net",
            FusionMode::RandomNoise => "random_noise",
        }
    }
}

/// What the attributes are concatenated with before the head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionLevel {
    /// The base discriminator's scalar output: head maps 1 + 8 → 1.
    #[default]
    Output,
    /// The base network's penultimate features: head maps h + 8 → 1.
    Features,
}

/// `head(concat(d_out, attrs))`.
pub fn fuse(g: &mut Graph, d_out: Var, attrs: Var, head: &LinearLayer, binding: Binding) -> Result<Var> {
    let (dw, aw) = (g.value(d_out).cols(), g.value(attrs).cols());
    if g.value(d_out).rows() != g.value(attrs).rows() {
        return Err(Error::contract("fusion inputs differ in batch size"));
    }
    if dw + aw != head.input_width() {
        return Err(Error::contract(format!(
            "fusion head expects {} inputs, got {dw} + {aw}",
            head.input_width()
        )));
    }
    let joined = g.concat_cols(&[d_out, attrs])?;
    head.forward(g, joined, binding)
}

/// Base discriminator plus an optional attribute fusion head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedDiscriminator {
    pub base: Mlp,
    pub head: Option<LinearLayer>,
    pub level: FusionLevel,
    /// Keep the head at its initial values.
    pub freeze_head: bool,
}

impl FusedDiscriminator {
    /// With output-level fusion the head starts as a pass-through of the base
    /// score, so an untrained fused model equals its baseline.
    pub fn new<R: Rng + ?Sized>(
        spec: MlpSpec,
        fused: bool,
        level: FusionLevel,
        freeze_head: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.output != 1 {
            return Err(Error::contract("discriminator must output one value"));
        }
        let base = Mlp::new(spec, rng)?;
        let head = if !fused {
            None
        } else {
            Some(match level {
                FusionLevel::Output => {
                    let mut h = LinearLayer::zeros("head", 1 + ATTRIBUTE_COUNT, 1);
                    h.weight.value.data_mut()[0] = 1.0;
                    h
                }
                FusionLevel::Features => {
                    LinearLayer::new("head", base.feature_width() + ATTRIBUTE_COUNT, 1, rng)?
                }
            })
        };
        Ok(FusedDiscriminator {
            base,
            head,
            level,
            freeze_head,
        })
    }

    /// Critic score for a batch; `attrs` is required exactly when fused.
    pub fn score(&self, g: &mut Graph, x: Var, attrs: Option<Var>, binding: Binding) -> Result<Var> {
        match (&self.head, attrs) {
            (None, None) => self.base.forward(g, x, binding),
            (None, Some(_)) => Err(Error::contract("unfused discriminator given attributes")),
            (Some(_), None) => Err(Error::contract("fused discriminator needs attributes")),
            (Some(head), Some(a)) => {
                let head_binding = if self.freeze_head { Binding::Frozen } else { binding };
                let inner = match self.level {
                    FusionLevel::Output => self.base.forward(g, x, binding)?,
                    FusionLevel::Features => self.base.forward_features(g, x, binding)?.features,
                };
                fuse(g, inner, a, head, head_binding)
            }
        }
    }

    /// Score of the base network alone.
    pub fn base_score(&self, g: &mut Graph, x: Var, binding: Binding) -> Result<Var> {
        self.base.forward(g, x, binding)
    }

    pub fn trainable_params(&self) -> Vec<&Param> {
        let mut v = self.base.params();
        if let (Some(h), false) = (&self.head, self.freeze_head) {
            v.extend(h.params());
        }
        v
    }

    pub fn trainable_params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.base.params_mut();
        if let (Some(h), false) = (&mut self.head, self.freeze_head) {
            v.extend(h.params_mut());
        }
        v
    }

    pub fn predict(&self, x: &Tensor, attrs: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let av = attrs.map(|a| g.constant(a.clone()));
        let s = self.score(&mut g, xv, av, Binding::Frozen)?;
        Ok(g.value(s).clone())
    }
}

impl HasParams for FusedDiscriminator {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.base.params();
        if let Some(h) = &self.head {
            v.extend(h.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.base.params_mut();
        if let Some(h) = &mut self.head {
            v.extend(h.params_mut());
        }
        v
    }
}
