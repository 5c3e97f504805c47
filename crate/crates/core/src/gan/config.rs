use serde::{Deserialize, Serialize};

use super::discriminator::{FusionLevel, FusionMode};
use super::losses::LossKind;
use super::penalty::DEFAULT_PENALTY_DIM_CAP;
use crate::error::{Error, Result};
use crate::nn::{Activation, OptimizerKind};

/// Everything that defines one adversarial training run.
///
/// Missing keys in a JSON config take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub loss: LossKind,
    pub fusion: FusionMode,
    pub fusion_level: FusionLevel,
    /// Gradient-penalty coefficient λ.
    pub lambda: f64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    pub learning_rate: f64,
    /// Decay both learning rates linearly to zero over `iterations`.
    pub lr_decay: bool,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    /// Generator updates.
    pub iterations: usize,
    pub latent_dim: usize,
    pub seed: u64,
    /// Finite-difference step for the penalty's input gradient.
    pub penalty_step: f64,
    pub penalty_dim_cap: usize,
    /// Take the penalty on the base score instead of the fused one.
    pub penalty_on_base: bool,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub generator_output: Activation,
    /// Use the printed minimax generator objective for DCGAN.
    pub dcgan_minimax: bool,
    pub freeze_head: bool,
    /// Standardize attribute-net outputs by their training moments before fusion.
    pub standardize_attributes: bool,
    /// Trace cadence in generator updates.
    pub trace_every: usize,
    /// Metric cadence in generator updates; 0 evaluates only at the end.
    pub eval_every: usize,
    pub eval_samples: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            loss: LossKind::WganGp,
            fusion: FusionMode::None,
            fusion_level: FusionLevel::Output,
            lambda: 10.0,
            n_critic: 5,
            learning_rate: 1e-4,
            lr_decay: false,
            optimizer: OptimizerKind::adam_default(),
            batch_size: 64,
            iterations: 20_000,
            latent_dim: 128,
            seed: 0,
            penalty_step: 1e-3,
            penalty_dim_cap: DEFAULT_PENALTY_DIM_CAP,
            penalty_on_base: false,
            generator_hidden: vec![64, 64, 64],
            discriminator_hidden: vec![64, 64, 64],
            generator_output: Activation::Identity,
            dcgan_minimax: false,
            freeze_head: false,
            standardize_attributes: false,
            trace_every: 100,
            eval_every: 0,
            eval_samples: 1000,
        }
    }
}

impl TrainingConfig {
    /// Defaults with the optimizer settings customary for each objective.
    pub fn for_loss(loss: LossKind) -> Self {
        let base = TrainingConfig {
            loss,
            ..TrainingConfig::default()
        };
        match loss {
            LossKind::WganGp => base,
            LossKind::Dcgan => TrainingConfig {
                learning_rate: 2e-4,
                optimizer: OptimizerKind::Adam {
                    beta1: 0.5,
                    beta2: 0.999,
                    eps: 1e-8,
                },
                n_critic: 1,
                ..base
            },
            LossKind::Lsgan => TrainingConfig {
                optimizer: OptimizerKind::rmsprop_default(),
                n_critic: 1,
                ..base
            },
        }
    }

    /// Settings sized for the 2-D toy data on one CPU core.
    ///
    /// A two-dimensional latent space, narrow networks and a linearly
    /// decaying learning rate let WGAN-GP place tight modes within 20k
    /// generator updates; the other objectives keep their optimizer presets.
    pub fn desk(loss: LossKind) -> Self {
        let mut c = TrainingConfig {
            latent_dim: 2,
            generator_hidden: vec![32, 32, 32],
            discriminator_hidden: vec![32, 32, 32],
            lr_decay: true,
            ..TrainingConfig::for_loss(loss)
        };
        if loss == LossKind::WganGp {
            c.learning_rate = 2e-3;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be a non-negative number, got {}", self.lambda)));
        }
        let positive = |field: &str, v: usize| {
            if v == 0 {
                Err(Error::config(field, "must be at least 1"))
            } else {
                Ok(())
            }
        };
        positive("n_critic", self.n_critic)?;
        positive("batch_size", self.batch_size)?;
        positive("iterations", self.iterations)?;
        positive("latent_dim", self.latent_dim)?;
        positive("trace_every", self.trace_every)?;
        if !(self.penalty_step > 0.0 && self.penalty_step.is_finite()) {
            return Err(Error::config("penalty_step", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.eval_samples < 2 {
            return Err(Error::config("eval_samples", "must be at least 2"));
        }
        if self.generator_hidden.contains(&0) || self.discriminator_hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        self.optimizer.validate()
    }
}
