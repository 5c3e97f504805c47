use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::discriminator::{FusedDiscriminator, FusionMode};
use super::losses::{
    dcgan_discriminator_loss, dcgan_generator_loss, lsgan_discriminator_loss, lsgan_generator_loss,
    wgan_critic_loss, wgan_generator_loss, LossKind,
};
use super::penalty::{interpolate, penalty_from_probes, probe_points};
use crate::attributes::{AttributeNet, ATTRIBUTE_COUNT};
use crate::autodiff::{Graph, HasParams, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, FeatureExtractor, GaussianMoments, MeanTerm, MetricSet};
use crate::nn::{Activation, Binding, BlockSpec, Mlp, MlpSpec, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticStats {
    pub loss: f64,
    /// `mean D(x) − mean D(x̃)` on the batch.
    pub wasserstein: f64,
    pub penalty: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub critic: CriticStats,
    pub generator_loss: f64,
}

/// Generator, discriminator, optimizers and the run's random stream.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainingConfig,
    pub generator: Mlp,
    pub discriminator: FusedDiscriminator,
    /// Held fixed for the whole run.
    pub attribute_net: Option<AttributeNet>,
    d_opt: OptimizerState,
    g_opt: OptimizerState,
    rng: ChaCha8Rng,
    pub iteration: usize,
}

impl Trainer {
    pub fn new(config: TrainingConfig, data_dim: usize, attribute_net: Option<AttributeNet>) -> Result<Self> {
        config.validate()?;
        if data_dim == 0 {
            return Err(Error::contract("data dimension must be positive"));
        }
        let attribute_net = match config.fusion {
            FusionMode::AttributeNet => {
                let net = attribute_net.ok_or_else(|| {
                    Error::config("fusion", "attribute_net mode needs a trained attribute net")
                })?;
                if net.net.input_width() != data_dim {
                    return Err(Error::contract(format!(
                        "attribute net reads {} inputs, data has {data_dim}",
                        net.net.input_width()
                    )));
                }
                Some(net)
            }
            _ => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let gen_spec = MlpSpec {
            input: config.latent_dim,
            hidden: config
                .generator_hidden
                .iter()
                .map(|&width| BlockSpec::Linear { width })
                .collect(),
            output: data_dim,
            activation: Activation::Relu,
            output_activation: config.generator_output,
        };
        let generator = Mlp::new(gen_spec, &mut rng)?;
        let discriminator = FusedDiscriminator::new(
            MlpSpec::relu(data_dim, &config.discriminator_hidden, 1),
            config.fusion != FusionMode::None,
            config.fusion_level,
            config.freeze_head,
            &mut rng,
        )?;
        Ok(Trainer {
            d_opt: OptimizerState::new(config.optimizer, config.learning_rate)?,
            g_opt: OptimizerState::new(config.optimizer, config.learning_rate)?,
            config,
            generator,
            discriminator,
            attribute_net,
            rng,
            iteration: 0,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.generator.output_width()
    }

    fn normal(&mut self, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| self.rng.sample(StandardNormal)).collect();
        Tensor::new(vec![rows, cols], data).expect("positive extents")
    }

    pub fn sample_latent(&mut self, n: usize) -> Tensor {
        self.normal(n, self.config.latent_dim)
    }

    /// Generator outputs for `n` fresh latent draws.
    pub fn sample(&mut self, n: usize) -> Result<Tensor> {
        let z = self.sample_latent(n);
        self.generator.predict(&z)
    }

    fn noise(&mut self, rows: usize) -> Option<Tensor> {
        (self.config.fusion == FusionMode::RandomNoise).then(|| self.normal(rows, ATTRIBUTE_COUNT))
    }

    fn attributes(&self, g: &mut Graph, x: Var, noise: Option<&Tensor>) -> Result<Option<Var>> {
        match self.config.fusion {
            FusionMode::None => Ok(None),
            FusionMode::AttributeNet => {
                let net = self.attribute_net.as_ref().expect("checked at construction");
                let a = if self.config.standardize_attributes {
                    net.forward_standardized(g, x)?
                } else {
                    net.forward(g, x)?
                };
                Ok(Some(a))
            }
            FusionMode::RandomNoise => {
                let n = noise.ok_or_else(|| Error::contract("random-noise fusion needs a noise draw"))?;
                Ok(Some(g.constant(n.clone())))
            }
        }
    }

    /// Fused critic score of `x`.
    pub fn critic(&self, g: &mut Graph, x: Var, noise: Option<&Tensor>, binding: Binding) -> Result<Var> {
        let attrs = self.attributes(g, x, noise)?;
        self.discriminator.score(g, x, attrs, binding)
    }

    /// The attribute input the discriminator would receive for `x`.
    pub fn attribute_input(&mut self, x: &Tensor) -> Result<Option<Tensor>> {
        let noise = self.noise(x.rows());
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        Ok(self.attributes(&mut g, xv, noise.as_ref())?.map(|a| g.value(a).clone()))
    }

    fn minibatch(&mut self, data: &Tensor, n: usize) -> Result<Tensor> {
        let dist = Uniform::new(0, data.rows()).map_err(|e| Error::contract(e.to_string()))?;
        let idx: Vec<usize> = (0..n).map(|_| self.rng.sample(dist)).collect();
        data.select_rows(&idx)
    }

    /// One discriminator update on `real`; fake rows are constants.
    pub fn critic_step(&mut self, real: &Tensor) -> Result<CriticStats> {
        let (b, d) = (real.rows(), real.cols());
        let z = self.sample_latent(b);
        let fake = self.generator.predict(&z)?;
        let penalized = self.config.loss == LossKind::WganGp && self.config.lambda > 0.0;
        let probes = if penalized {
            let eps: Vec<f64> = (0..b).map(|_| self.rng.random::<f64>()).collect();
            let x_hat = interpolate(real, &fake, &eps)?;
            Some(probe_points(&x_hat, self.config.penalty_step, self.config.penalty_dim_cap)?)
        } else {
            None
        };
        let mut rows = real.data().to_vec();
        rows.extend_from_slice(fake.data());
        if let Some(p) = &probes {
            rows.extend_from_slice(p.data());
        }
        let total = rows.len() / d;
        let stacked = Tensor::new(vec![total, d], rows)?;
        let noise = if self.config.fusion == FusionMode::RandomNoise {
            let mut n = self.normal(2 * b, ATTRIBUTE_COUNT).into_data();
            if probes.is_some() {
                // probes around one interpolate share its attribute draw
                let hat = self.normal(b, ATTRIBUTE_COUNT);
                for _ in 0..2 * d {
                    n.extend_from_slice(hat.data());
                }
            }
            Some(Tensor::new(vec![total, ATTRIBUTE_COUNT], n)?)
        } else {
            None
        };

        let mut g = Graph::new();
        let xv = g.constant(stacked);
        let out = self.critic(&mut g, xv, noise.as_ref(), Binding::Trainable)?;
        let d_real = g.slice_rows(out, 0, b)?;
        let d_fake = g.slice_rows(out, b, b)?;
        let mut penalty_value = 0.0;
        let loss = match self.config.loss {
            LossKind::WganGp => {
                let penalty = if penalized {
                    let source = if self.config.penalty_on_base {
                        self.discriminator.base_score(&mut g, xv, Binding::Trainable)?
                    } else {
                        out
                    };
                    let probe_out = g.slice_rows(source, 2 * b, 2 * d * b)?;
                    let p = penalty_from_probes(&mut g, probe_out, b, d, self.config.penalty_step)?;
                    penalty_value = g.value(p).item();
                    Some((p, self.config.lambda))
                } else {
                    None
                };
                wgan_critic_loss(&mut g, d_real, d_fake, penalty)?
            }
            LossKind::Dcgan => dcgan_discriminator_loss(&mut g, d_real, d_fake)?,
            LossKind::Lsgan => lsgan_discriminator_loss(&mut g, d_real, d_fake)?,
        };
        let mr = g.value(d_real).data().iter().sum::<f64>() / b as f64;
        let mf = g.value(d_fake).data().iter().sum::<f64>() / b as f64;
        g.backward(loss)?;
        let grads = g.grads_for(&self.discriminator.trainable_params());
        self.d_opt.step(&mut self.discriminator.trainable_params_mut(), &grads)?;
        Ok(CriticStats {
            loss: g.value(loss).item(),
            wasserstein: mr - mf,
            penalty: penalty_value,
        })
    }

    /// One generator update against the current discriminator.
    pub fn generator_step(&mut self) -> Result<f64> {
        let b = self.config.batch_size;
        let z = self.sample_latent(b);
        let noise = self.noise(b);
        let mut g = Graph::new();
        let zv = g.constant(z);
        let fake = self.generator.forward(&mut g, zv, Binding::Trainable)?;
        let d_fake = self.critic(&mut g, fake, noise.as_ref(), Binding::Frozen)?;
        let loss = match self.config.loss {
            LossKind::WganGp => wgan_generator_loss(&mut g, d_fake)?,
            LossKind::Dcgan => dcgan_generator_loss(&mut g, d_fake, self.config.dcgan_minimax)?,
            LossKind::Lsgan => lsgan_generator_loss(&mut g, d_fake)?,
        };
        g.backward(loss)?;
        let grads = g.grads_for(&self.generator.params());
        self.g_opt.step(&mut self.generator.params_mut(), &grads)?;
        Ok(g.value(loss).item())
    }

    /// `n_critic` discriminator updates followed by one generator update.
    pub fn step(&mut self, data: &Tensor) -> Result<StepStats> {
        if self.config.lr_decay {
            let left = 1.0 - self.iteration as f64 / self.config.iterations as f64;
            let lr = self.config.learning_rate * left.max(0.0);
            self.d_opt.set_lr(lr);
            self.g_opt.set_lr(lr);
        }
        let mut critic = None;
        for _ in 0..self.config.n_critic {
            let real = self.minibatch(data, self.config.batch_size)?;
            critic = Some(self.critic_step(&real)?);
        }
        let generator_loss = self.generator_step()?;
        self.iteration += 1;
        Ok(StepStats {
            critic: critic.expect("n_critic ≥ 1"),
            generator_loss,
        })
    }

    /// `mean D(x) − mean D(x̃)` over `n` rows drawn from `data` and `n` fakes.
    pub fn critic_value(&mut self, data: &Tensor, n: usize) -> Result<f64> {
        let real = self.minibatch(data, n)?;
        let fake = self.sample(n)?;
        let mut means = [0.0; 2];
        for (slot, x) in means.iter_mut().zip([real, fake]) {
            let noise = self.noise(n);
            let mut g = Graph::new();
            let xv = g.constant(x);
            let s = self.critic(&mut g, xv, noise.as_ref(), Binding::Frozen)?;
            *slot = g.value(s).data().iter().sum::<f64>() / n as f64;
        }
        Ok(means[0] - means[1])
    }
}

/// Inputs for scoring generated samples during training.
pub struct Evaluator<'a> {
    pub extractor: &'a FeatureExtractor,
    pub real_moments: &'a GaussianMoments,
    pub data_labels: &'a [f64],
}

impl Evaluator<'_> {
    pub fn evaluate(&self, generated: &Tensor) -> Result<MetricSet> {
        evaluate(
            self.extractor,
            generated,
            self.real_moments,
            self.data_labels,
            MeanTerm::Squared,
        )
    }
}

/// One line of the metrics trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub d_train: f64,
    pub d_test: f64,
    pub penalty: f64,
    pub is: Option<f64>,
    pub ms: Option<f64>,
    pub fid: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    Diverged { iteration: usize, detail: String },
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub trace: Vec<TraceRecord>,
    pub status: RunStatus,
}

/// Rows used to estimate the critic value on each split.
const CRITIC_VALUE_ROWS: usize = 256;

/// Runs the configured number of generator updates.
///
/// Every trace record is passed to `sink` as soon as it exists. A
/// non-finite loss stops the run with [`RunStatus::Diverged`]; the trace up
/// to that point is kept.
pub fn train(
    config: TrainingConfig,
    train_set: &Tensor,
    test_set: &Tensor,
    attribute_net: Option<AttributeNet>,
    evaluator: Option<&Evaluator<'_>>,
    mut sink: impl FnMut(&TraceRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    if train_set.cols() != test_set.cols() {
        return Err(Error::contract("train and test splits differ in width"));
    }
    let mut trainer = Trainer::new(config, train_set.cols(), attribute_net)?;
    let mut trace = Vec::new();
    let total = trainer.config.iterations;
    let mut status = RunStatus::Success;
    for it in 1..=total {
        let stats = match trainer.step(train_set) {
            Ok(s) => s,
            Err(Error::NonFinite { what }) => {
                status = RunStatus::Diverged {
                    iteration: it,
                    detail: what,
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let eval_due = it == total
            || (trainer.config.eval_every > 0 && it % trainer.config.eval_every == 0);
        if it % trainer.config.trace_every != 0 && !eval_due {
            continue;
        }
        let d_train = trainer.critic_value(train_set, CRITIC_VALUE_ROWS)?;
        let d_test = trainer.critic_value(test_set, CRITIC_VALUE_ROWS)?;
        let mut rec = TraceRecord {
            iter: it,
            d_train,
            d_test,
            penalty: stats.critic.penalty,
            is: None,
            ms: None,
            fid: None,
        };
        if let (Some(ev), true) = (evaluator, eval_due) {
            let samples = trainer.sample(trainer.config.eval_samples)?;
            if samples.all_finite() {
                let m = ev.evaluate(&samples)?;
                rec.is = Some(m.inception_score);
                rec.ms = Some(m.mode_score);
                rec.fid = Some(m.fid);
            }
        }
        if ![rec.d_train, rec.d_test, rec.penalty].iter().all(|v| v.is_finite()) {
            status = RunStatus::Diverged {
                iteration: it,
                detail: "critic value".into(),
            };
            break;
        }
        sink(&rec)?;
        trace.push(rec);
    }
    Ok(TrainOutcome {
        trainer,
        trace,
        status,
    })
}
