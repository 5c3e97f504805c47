use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    RmsProp { decay: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl OptimizerKind {
    /// β₁ = 0, β₂ = 0.9, ε = 1e-8.
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }

    pub fn rmsprop_default() -> Self {
        OptimizerKind::RmsProp {
            decay: 0.99,
            eps: 1e-8,
        }
    }

    pub fn sgd_momentum(momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { momentum }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(name, format!("must lie in [0, 1), got {v}")))
            }
        };
        match *self {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                unit("beta1", beta1)?;
                unit("beta2", beta2)?;
                if !(eps > 0.0) {
                    return Err(Error::config("eps", "must be positive"));
                }
            }
            OptimizerKind::RmsProp { decay, eps } => {
                unit("decay", decay)?;
                if !(eps > 0.0) {
                    return Err(Error::config("eps", "must be positive"));
                }
            }
            OptimizerKind::SgdMomentum { momentum } => unit("momentum", momentum)?,
        }
        Ok(())
    }
}

/// Learning rate as a function of the epoch index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` every `every` epochs.
    Step { every: usize, factor: f64 },
}

impl LrSchedule {
    pub fn halving_every(every: usize) -> Self {
        LrSchedule::Step { every, factor: 0.5 }
    }

    pub fn lr_at(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { every, factor } => {
                if every == 0 {
                    base
                } else {
                    base * factor.powi((epoch / every) as i32)
                }
            }
        }
    }
}

/// Optimizer with its per-parameter accumulators.
///
/// `first` holds Adam's first moment or the SGD velocity; `second` holds the
/// second-moment (Adam) or mean-square (RMSProp) accumulator. Accumulators
/// are sized on the first step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::config("learning_rate", format!("must be positive, got {lr}")));
        }
        kind.validate()?;
        Ok(OptimizerState {
            kind,
            lr,
            step: 0,
            first: vec![],
            second: vec![],
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn ensure_accumulators(&mut self, params: &[&mut Param]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
            return Ok(());
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params).any(|(a, p)| a.len() != p.value.len())
        {
            return Err(Error::contract(
                "optimizer accumulators do not match the parameter list",
            ));
        }
        Ok(())
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [&mut Param], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", p.name),
                });
            }
        }
        self.ensure_accumulators(params)?;
        self.step += 1;
        let t = self.step as i32;
        let lr = self.lr;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let values = p.value.data_mut();
            match self.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((x, &gi), mi), vi) in values.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * gi;
                        *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                        *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
                OptimizerKind::RmsProp { decay, eps } => {
                    for ((x, &gi), vi) in values.iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vi = decay * *vi + (1.0 - decay) * gi * gi;
                        *x -= lr * gi / (vi.sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum { momentum } => {
                    for ((x, &gi), mi) in values.iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        *mi = momentum * *mi + gi;
                        *x -= lr * *mi;
                    }
                }
            }
        }
        Ok(())
    }
}
