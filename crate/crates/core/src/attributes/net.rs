use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::vector::{Attribute, AttributeVector, ATTRIBUTE_COUNT};
use crate::autodiff::{Graph, HasParams, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{Binding, LrSchedule, Mlp, MlpSpec, OptimizerKind, OptimizerState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeSchedule {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub min_improvement: f64,
    pub lr_schedule: LrSchedule,
    /// Skip parameter updates; only useful for checking the stopping rule.
    #[serde(default)]
    pub frozen: bool,
}

impl Default for AttributeSchedule {
    fn default() -> Self {
        AttributeSchedule {
            hidden: vec![32, 32],
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 16,
            max_epochs: 300,
            patience: 20,
            min_improvement: 1e-4,
            lr_schedule: LrSchedule::halving_every(50),
            frozen: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Plateau,
}

/// Regressor from a sample to its eight attribute scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeNet {
    pub net: Mlp,
    pub epochs_run: usize,
    pub stop_reason: Option<StopReason>,
    pub best_val_mse: f64,
    /// Validation MSE before training and after every epoch.
    pub val_history: Vec<f64>,
    /// Mean and standard deviation of the training targets, per attribute.
    pub target_mean: [f64; ATTRIBUTE_COUNT],
    pub target_sd: [f64; ATTRIBUTE_COUNT],
}

/// Raw regression outputs and their copies clamped to the score range.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributePredictions {
    pub raw: Vec<AttributeVector>,
    pub reported: Vec<AttributeVector>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub per_attribute: [f64; ATTRIBUTE_COUNT],
    pub mean: f64,
}

fn mse(pred: &Tensor, target: &Tensor) -> f64 {
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / pred.len() as f64
}

fn check_targets(x: &Tensor, y: &Tensor, what: &str) -> Result<()> {
    if x.shape().len() != 2 || y.shape() != [x.rows(), ATTRIBUTE_COUNT] {
        return Err(Error::contract(format!(
            "{what} split: expected inputs (n, d) and targets (n, 8), got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(())
}

impl AttributeNet {
    /// A network whose every parameter is zero.
    pub fn zeros(input: usize, hidden: &[usize]) -> Result<Self> {
        // initial values are overwritten below
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(MlpSpec::relu(input, hidden, ATTRIBUTE_COUNT), &mut rng)?;
        net.zero_();
        Ok(AttributeNet {
            net,
            epochs_run: 0,
            stop_reason: None,
            best_val_mse: f64::INFINITY,
            val_history: Vec::new(),
            target_mean: [0.0; ATTRIBUTE_COUNT],
            target_sd: [1.0; ATTRIBUTE_COUNT],
        })
    }

    /// Fits by minibatch SGD with momentum on mean squared error, keeping the
    /// weights with the lowest validation error.
    pub fn train<R: Rng + ?Sized>(
        train_x: &Tensor,
        train_y: &Tensor,
        val_x: &Tensor,
        val_y: &Tensor,
        schedule: &AttributeSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        check_targets(train_x, train_y, "training")?;
        check_targets(val_x, val_y, "validation")?;
        if train_x.cols() != val_x.cols() {
            return Err(Error::contract("training and validation inputs differ in width"));
        }
        if schedule.batch_size == 0 || schedule.max_epochs == 0 {
            return Err(Error::config("attribute_schedule", "batch size and epochs must be positive"));
        }
        let spec = MlpSpec::relu(train_x.cols(), &schedule.hidden, ATTRIBUTE_COUNT);
        let mut net = Mlp::new(spec, rng)?;
        let mut opt = OptimizerState::new(
            OptimizerKind::sgd_momentum(schedule.momentum),
            schedule.learning_rate,
        )?;
        let (target_mean, target_sd) = column_moments(train_y);

        let mut best = net.clone();
        let mut best_mse = mse(&net.predict(val_x)?, val_y);
        let mut history = vec![best_mse];
        let mut stale = 0;
        let mut stop = StopReason::MaxEpochs;
        let mut epochs = 0;
        let mut order: Vec<usize> = (0..train_x.rows()).collect();
        for epoch in 0..schedule.max_epochs {
            epochs = epoch + 1;
            opt.set_lr(schedule.lr_schedule.lr_at(schedule.learning_rate, epoch));
            order.shuffle(rng);
            if !schedule.frozen {
                for chunk in order.chunks(schedule.batch_size) {
                    let xb = train_x.select_rows(chunk)?;
                    let yb = train_y.select_rows(chunk)?;
                    let mut g = Graph::new();
                    let loss = regression_loss(&net, &mut g, xb, yb)?;
                    g.backward(loss)?;
                    let grads = g.grads_for(&net.params());
                    opt.step(&mut net.params_mut(), &grads)?;
                }
            }
            let val = mse(&net.predict(val_x)?, val_y);
            if !val.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("attribute-net validation loss at epoch {epochs}"),
                });
            }
            history.push(val);
            if val < best_mse - schedule.min_improvement {
                best_mse = val;
                best = net.clone();
                stale = 0;
            } else {
                if val < best_mse {
                    best_mse = val;
                    best = net.clone();
                }
                stale += 1;
                if stale >= schedule.patience {
                    stop = StopReason::Plateau;
                    break;
                }
            }
        }
        Ok(AttributeNet {
            net: best,
            epochs_run: epochs,
            stop_reason: Some(stop),
            best_val_mse: best_mse,
            val_history: history,
            target_mean,
            target_sd,
        })
    }

    /// Forward pass inside a graph; parameters enter as constants.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.net.forward(g, x, Binding::Frozen)
    }

    /// Outputs rescaled by the training-target moments.
    pub fn forward_standardized(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let raw = self.forward(g, x)?;
        let mean = g.constant(Tensor::new(vec![ATTRIBUTE_COUNT], self.target_mean.to_vec())?);
        let inv_sd = g.constant(Tensor::new(
            vec![ATTRIBUTE_COUNT],
            self.target_sd.iter().map(|s| 1.0 / s.max(1e-6)).collect(),
        )?);
        let centred = g.sub(raw, mean)?;
        g.mul(centred, inv_sd)
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<AttributePredictions> {
        if rows.is_empty() {
            return Ok(AttributePredictions {
                raw: Vec::new(),
                reported: Vec::new(),
            });
        }
        let out = self.net.predict(&Tensor::from_rows(rows)?)?;
        let raw: Vec<AttributeVector> = (0..out.rows())
            .map(|r| AttributeVector::from_slice(out.row(r)))
            .collect::<Result<_>>()?;
        let reported = raw.iter().map(AttributeVector::clamped).collect();
        Ok(AttributePredictions { raw, reported })
    }

    pub fn rmse(&self, x: &Tensor, y: &Tensor) -> Result<RmseReport> {
        check_targets(x, y, "evaluation")?;
        let pred = self.net.predict(x)?;
        rmse_from_predictions(&pred.to_rows(), &y.to_rows())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let net: AttributeNet = serde_json::from_reader(std::io::BufReader::new(f))?;
        net.net.spec.validate()?;
        if net.net.output_width() != ATTRIBUTE_COUNT {
            return Err(Error::Malformed("attribute net must output 8 values".into()));
        }
        Ok(net)
    }
}

fn regression_loss(net: &Mlp, g: &mut Graph, x: Tensor, y: Tensor) -> Result<Var> {
    let xv = g.constant(x);
    let pred = net.forward(g, xv, Binding::Trainable)?;
    let t = g.constant(y);
    let diff = g.sub(pred, t)?;
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

fn column_moments(y: &Tensor) -> ([f64; ATTRIBUTE_COUNT], [f64; ATTRIBUTE_COUNT]) {
    let n = y.rows() as f64;
    let mut mean = [0.0; ATTRIBUTE_COUNT];
    let mut sd = [0.0; ATTRIBUTE_COUNT];
    for r in 0..y.rows() {
        for (m, v) in mean.iter_mut().zip(y.row(r)) {
            *m += v / n;
        }
    }
    for r in 0..y.rows() {
        for k in 0..ATTRIBUTE_COUNT {
            sd[k] += (y.at(r, k) - mean[k]).powi(2) / n;
        }
    }
    (mean, sd.map(f64::sqrt))
}

/// Per-attribute root mean squared error and its average over attributes.
pub fn rmse_from_predictions(pred: &[Vec<f64>], target: &[Vec<f64>]) -> Result<RmseReport> {
    if pred.is_empty() {
        return Err(Error::contract("rmse needs at least one sample"));
    }
    if pred.len() != target.len()
        || pred.iter().chain(target).any(|r| r.len() != ATTRIBUTE_COUNT)
    {
        return Err(Error::contract("predictions and targets must both be (n, 8)"));
    }
    let mut sums = [0.0; ATTRIBUTE_COUNT];
    for (p, t) in pred.iter().zip(target) {
        for k in 0..ATTRIBUTE_COUNT {
            sums[k] += (p[k] - t[k]).powi(2);
        }
    }
    let per_attribute = sums.map(|s| (s / pred.len() as f64).sqrt());
    Ok(RmseReport {
        mean: per_attribute.iter().sum::<f64>() / ATTRIBUTE_COUNT as f64,
        per_attribute,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRow {
    image_id: String,
    color: f64,
    illuminance: f64,
    object: f64,
    people: f64,
    scene: f64,
    texture: f64,
    realism: f64,
    weirdness: f64,
}

/// Writes `image_id` plus one column per attribute.
pub fn write_predictions(path: impl AsRef<Path>, ids: &[String], preds: &[AttributeVector]) -> Result<()> {
    if ids.len() != preds.len() {
        return Err(Error::contract("one id per prediction required"));
    }
    let path = path.as_ref();
    let mut w = csv::Writer::from_writer(File::create(path).map_err(|e| Error::io(path, e))?);
    for (id, v) in ids.iter().zip(preds) {
        let a = |x: Attribute| v.get(x);
        w.serialize(PredictionRow {
            image_id: id.clone(),
            color: a(Attribute::Color),
            illuminance: a(Attribute::Illuminance),
            object: a(Attribute::Object),
            people: a(Attribute::People),
            scene: a(Attribute::Scene),
            texture: a(Attribute::Texture),
            realism: a(Attribute::Realism),
            weirdness: a(Attribute::Weirdness),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<AttributeVector>)> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_reader(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut ids = Vec::new();
    let mut out = Vec::new();
    for row in r.deserialize::<PredictionRow>() {
        let p = row?;
        out.push(AttributeVector::from_slice(&[
            p.color,
            p.illuminance,
            p.object,
            p.people,
            p.scene,
            p.texture,
            p.realism,
            p.weirdness,
        ])?);
        ids.push(p.image_id);
    }
    Ok((ids, out))
}
