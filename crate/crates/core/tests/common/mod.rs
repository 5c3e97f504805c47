//! Oracles and fixtures shared by the integration suites.
#![allow(dead_code)]

use attrgan::autodiff::{check_param_gradients, grad_check, GradCheckReport, Graph, Tensor, Var};
use attrgan::gan::{
    dcgan_discriminator_loss, dcgan_generator_loss, gradient_penalty, lsgan_discriminator_loss,
    lsgan_generator_loss, wgan_critic_loss, wgan_generator_loss,
};
use attrgan::nn::{Activation, Binding, BlockSpec, Mlp, MlpSpec};
use attrgan::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

type OpFn = Box<dyn Fn(&mut Graph, Var) -> Result<Var>>;

/// One differentiable operation applied to a random input of `shape`.
pub struct OpCase {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub f: OpFn,
}

fn case(name: &'static str, shape: &[usize], f: impl Fn(&mut Graph, Var) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        shape: shape.to_vec(),
        f: Box::new(f),
    }
}

fn halves(g: &mut Graph, x: Var) -> Result<(Var, Var)> {
    let r = g.value(x).rows() / 2;
    Ok((g.slice_rows(x, 0, r)?, g.slice_rows(x, r, r)?))
}

fn positive(g: &mut Graph, x: Var) -> Var {
    let s = g.square(x);
    g.add_scalar(s, 0.5)
}

/// Every graph operation, each reduced to a scalar by a fixed weighting so
/// no gradient entry is trivially equal to its neighbours.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        case("add", &[6, 3], |g, x| { let (a, b) = halves(g, x)?; g.add(a, b) }),
        case("add_broadcast", &[4, 3], |g, x| {
            let a = g.slice_rows(x, 0, 3)?;
            let b = g.slice_rows(x, 3, 1)?;
            g.add(a, b)
        }),
        case("sub", &[6, 3], |g, x| { let (a, b) = halves(g, x)?; g.sub(a, b) }),
        case("mul", &[6, 3], |g, x| { let (a, b) = halves(g, x)?; g.mul(a, b) }),
        case("mul_broadcast", &[4, 3], |g, x| {
            let a = g.slice_rows(x, 0, 3)?;
            let b = g.slice_rows(x, 3, 1)?;
            g.mul(a, b)
        }),
        case("div", &[6, 3], |g, x| {
            let (a, b) = halves(g, x)?;
            let d = positive(g, b);
            g.div(a, d)
        }),
        case("scale", &[3, 4], |g, x| Ok(g.scale(x, -1.7))),
        case("add_scalar", &[3, 4], |g, x| Ok(g.add_scalar(x, 0.3))),
        case("neg", &[3, 4], |g, x| Ok(g.neg(x))),
        case("square", &[3, 4], |g, x| Ok(g.square(x))),
        case("sqrt", &[3, 4], |g, x| { let p = positive(g, x); g.sqrt(p) }),
        case("exp", &[3, 4], |g, x| Ok(g.exp(x))),
        case("ln", &[3, 4], |g, x| { let p = positive(g, x); g.ln(p) }),
        case("tanh", &[3, 4], |g, x| Ok(g.tanh(x))),
        case("sigmoid", &[3, 4], |g, x| Ok(g.sigmoid(x))),
        case("relu", &[3, 4], |g, x| Ok(g.relu(x))),
        case("leaky_relu", &[3, 4], |g, x| Ok(g.leaky_relu(x, 0.2))),
        case("clamp", &[3, 4], |g, x| Ok(g.clamp(x, -0.5, 0.5))),
        case("sum", &[3, 4], |g, x| Ok(g.sum(x))),
        case("mean", &[3, 4], |g, x| Ok(g.mean(x))),
        case("sum_axis0", &[3, 4], |g, x| g.sum_axis(x, 0)),
        case("sum_axis1", &[3, 4], |g, x| g.sum_axis(x, 1)),
        case("mean_axis0", &[3, 4], |g, x| g.mean_axis(x, 0)),
        case("mean_axis1", &[3, 4], |g, x| g.mean_axis(x, 1)),
        case("row_norm", &[3, 4], |g, x| g.row_norm(x)),
        case("concat_cols", &[6, 3], |g, x| { let (a, b) = halves(g, x)?; g.concat_cols(&[a, b]) }),
        case("concat_rows", &[6, 3], |g, x| { let (a, b) = halves(g, x)?; g.concat_rows(&[b, a]) }),
        case("slice_rows", &[4, 3], |g, x| g.slice_rows(x, 1, 2)),
        case("reshape", &[3, 4], |g, x| g.reshape(x, vec![2, 6])),
        case("transpose", &[3, 4], |g, x| g.transpose(x)),
        case("matmul", &[6, 3], |g, x| { let (a, b) = halves(g, x)?; g.matmul(a, b) }),
        case("inverse", &[3, 3], |g, x| {
            let shift = g.constant(Tensor::identity(3).map(|v| 4.0 * v));
            let m = g.add(x, shift)?;
            g.inverse(m)
        }),
        case("logdet", &[3, 3], |g, x| {
            let t = g.transpose(x)?;
            let s = g.matmul(t, x)?;
            let eye = g.constant(Tensor::identity(3));
            let spd = g.add(s, eye)?;
            g.logdet(spd)
        }),
        case("softmax_rows", &[3, 4], |g, x| g.softmax_rows(x)),
        case("log_softmax_rows", &[3, 4], |g, x| g.log_softmax_rows(x)),
    ]
}

/// Reduces `y` to a scalar with weights `cos(1.3 i + 0.7)`.
pub fn weighted_sum(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| (1.3 * i as f64 + 0.7).cos()).collect())?;
    let wv = g.constant(w);
    let p = g.mul(y, wv)?;
    Ok(g.sum(p))
}

pub struct OpOutcome {
    pub name: &'static str,
    pub worst: f64,
    pub checked: usize,
}

/// Runs every operation's gradient check on `trials` random inputs.
pub fn check_all_ops(trials: usize, h: f64) -> Vec<OpOutcome> {
    let mut rng = rng(11);
    op_cases()
        .into_iter()
        .map(|c| {
            let mut worst = 0.0f64;
            let mut checked = 0;
            for _ in 0..trials {
                let x = normal_tensor(&mut rng, &c.shape);
                let f = &c.f;
                let r = grad_check(
                    |g, xv| {
                        let y = f(g, xv)?;
                        weighted_sum(g, y)
                    },
                    &x,
                    h,
                )
                .unwrap_or_else(|e| panic!("{}: {e}", c.name));
                worst = worst.max(r.max_rel_error);
                checked += r.checked;
            }
            OpOutcome {
                name: c.name,
                worst,
                checked,
            }
        })
        .collect()
}

fn tanh_net(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Mlp {
    let spec = MlpSpec {
        input,
        hidden: vec![BlockSpec::Linear { width: 5 }],
        output,
        activation: Activation::Tanh,
        output_activation: Activation::Identity,
    };
    Mlp::new(spec, rng).unwrap()
}

/// Gradient checks of every discriminator and generator objective on
/// tiny smooth networks, the WGAN critic including its penalty.
pub fn gan_loss_checks(h: f64) -> Vec<(&'static str, GradCheckReport)> {
    let mut r = rng(5);
    let real = normal_tensor(&mut r, &[4, 2]);
    let z = normal_tensor(&mut r, &[4, 3]);
    let eps: Vec<f64> = (0..4).map(|_| r.random::<f64>()).collect();
    let mut d = tanh_net(2, 1, &mut r);
    let mut gen = tanh_net(3, 2, &mut r);
    let fake = gen.predict(&z).unwrap();
    let mut out = Vec::new();

    type CriticLoss = fn(&mut Graph, Var, Var) -> Result<Var>;
    let critics: [(&'static str, CriticLoss); 3] = [
        ("wgan_gp critic", |g, a, b| wgan_critic_loss(g, a, b, None)),
        ("dcgan discriminator", dcgan_discriminator_loss),
        ("lsgan discriminator", lsgan_discriminator_loss),
    ];
    for (name, loss) in critics {
        let (real, fake, eps) = (real.clone(), fake.clone(), eps.clone());
        let report = check_param_gradients(
            &mut d,
            move |net: &Mlp, g: &mut Graph| {
                let rv = g.constant(real.clone());
                let fv = g.constant(fake.clone());
                let dr = net.forward(g, rv, Binding::Trainable)?;
                let df = net.forward(g, fv, Binding::Trainable)?;
                if name.starts_with("wgan") {
                    let p = gradient_penalty(
                        g,
                        |g, x| net.forward(g, x, Binding::Trainable),
                        &real,
                        &fake,
                        &eps,
                        1e-3,
                        64,
                    )?;
                    return wgan_critic_loss(g, dr, df, Some((p, 10.0)));
                }
                loss(g, dr, df)
            },
            h,
        )
        .unwrap();
        out.push((name, report));
    }

    type GenLoss = fn(&mut Graph, Var) -> Result<Var>;
    let gens: [(&'static str, GenLoss); 4] = [
        ("wgan_gp generator", wgan_generator_loss),
        ("dcgan generator", |g, v| dcgan_generator_loss(g, v, false)),
        ("dcgan minimax generator", |g, v| dcgan_generator_loss(g, v, true)),
        ("lsgan generator", lsgan_generator_loss),
    ];
    for (name, loss) in gens {
        let (z, d) = (z.clone(), d.clone());
        let report = check_param_gradients(
            &mut gen,
            move |net: &Mlp, g: &mut Graph| {
                let zv = g.constant(z.clone());
                let x = net.forward(g, zv, Binding::Trainable)?;
                let s = d.forward(g, x, Binding::Frozen)?;
                loss(g, s)
            },
            h,
        )
        .unwrap();
        out.push((name, report));
    }
    out
}

/// Two-layer tanh critic `f(x) = v·tanh(W x + b) + c` with its exact input
/// gradient `Wᵀ (v ⊙ (1 − tanh²(W x + b)))`.
pub struct TanhCritic {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
}

impl TanhCritic {
    pub fn fixed() -> Self {
        TanhCritic {
            w: vec![vec![0.9, -0.4], vec![0.3, 1.1], vec![-0.7, 0.5]],
            b: vec![0.1, -0.2, 0.05],
            v: vec![1.2, -0.8, 0.6],
            c: 0.3,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let hidden = self.w.len();
        let d = self.w[0].len();
        let wt: Vec<f64> = (0..d).flat_map(|j| self.w.iter().map(move |row| row[j])).collect();
        let wv = g.constant(Tensor::new(vec![d, hidden], wt)?);
        let bv = g.constant(Tensor::new(vec![hidden], self.b.clone())?);
        let vv = g.constant(Tensor::new(vec![hidden, 1], self.v.clone())?);
        let a = g.matmul(x, wv)?;
        let a = g.add(a, bv)?;
        let t = g.tanh(a);
        let y = g.matmul(t, vv)?;
        Ok(g.add_scalar(y, self.c))
    }

    pub fn input_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; x.len()];
        for (k, row) in self.w.iter().enumerate() {
            let a: f64 = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + self.b[k];
            let s = self.v[k] * (1.0 - a.tanh().powi(2));
            for (gj, wj) in grad.iter_mut().zip(row) {
                *gj += s * wj;
            }
        }
        grad
    }

    /// `mean_i (‖∇f(x̂_i)‖ − 1)²` with exact gradients.
    pub fn exact_penalty(&self, x_hat: &Tensor) -> f64 {
        let n = x_hat.rows();
        (0..n)
            .map(|i| {
                let gr = self.input_gradient(x_hat.row(i));
                (gr.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).powi(2)
            })
            .sum::<f64>()
            / n as f64
    }
}

/// Published group summaries of human ratings: attribute, real mean and
/// sd, fake mean and sd, printed z.
pub const TABLE2: [(&str, f64, f64, f64, f64, f64); 8] = [
    ("color", 3.54, 0.74, 3.50, 0.74, 0.87),
    ("illuminance", 3.98, 0.58, 3.33, 0.58, 17.38),
    ("object", 4.03, 0.69, 3.50, 0.52, 13.44),
    ("people", 2.14, 1.09, 1.93, 0.56, 3.59),
    ("realism", 4.13, 0.49, 3.17, 0.55, 28.85),
    ("scene", 2.95, 1.02, 2.97, 0.66, -0.21),
    ("texture", 2.22, 0.61, 2.57, 0.56, -9.28),
    ("weirdness", 2.29, 0.71, 3.60, 0.62, -30.00),
];
pub const TABLE2_N_REAL: usize = 400;
pub const TABLE2_N_FAKE: usize = 600;
pub const TABLE2_TIGHT: [&str; 3] = ["illuminance", "realism", "weirdness"];

/// Simple-structure loadings for six variables on two factors.
pub fn two_factor_loadings() -> Vec<Vec<f64>> {
    vec![
        vec![0.9, 0.0],
        vec![0.85, 0.0],
        vec![0.8, 0.0],
        vec![0.0, 0.9],
        vec![0.0, 0.85],
        vec![0.0, 0.8],
    ]
}

/// `n` draws of `x = L f + e` with independent standard-normal factors and
/// noise scaled so every variable has unit variance.
pub fn factor_sample(loadings: &[Vec<f64>], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let k = loadings[0].len();
    (0..n)
        .map(|_| {
            let f: Vec<f64> = (0..k).map(|_| r.sample(StandardNormal)).collect();
            loadings
                .iter()
                .map(|row| {
                    let common: f64 = row.iter().zip(&f).map(|(l, v)| l * v).sum();
                    let psi = 1.0 - row.iter().map(|l| l * l).sum::<f64>();
                    let e: f64 = r.sample(StandardNormal);
                    common + psi.sqrt() * e
                })
                .collect()
        })
        .collect()
}

/// Textbook sample correlation, written independently of the library.
pub fn correlation_oracle(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let p = rows[0].len();
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let cov = |a: usize, b: usize| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0);
    (0..p)
        .map(|i| (0..p).map(|j| cov(i, j) / (cov(i, i) * cov(j, j)).sqrt()).collect())
        .collect()
}

/// Random orthogonal matrix from Gram-Schmidt on normal columns.
pub fn random_rotation(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    (0..d).map(|i| (0..d).map(|j| cols[j][i]).collect()).collect()
}

/// `Q diag(lambda) Qᵀ`.
pub fn conjugate_diagonal(q: &[Vec<f64>], lambda: &[f64]) -> Vec<Vec<f64>> {
    let d = lambda.len();
    let mut out: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| (0..d).map(|k| q[i][k] * lambda[k] * q[j][k]).sum()).collect())
        .collect();
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (out[i][j] + out[j][i]);
            out[i][j] = m;
            out[j][i] = m;
        }
    }
    out
}

/// A small matrix that runs in seconds.
pub fn tiny_experiment(
    losses: &[attrgan::gan::LossKind],
    fusions: &[attrgan::gan::FusionMode],
    seeds: &[u64],
) -> attrgan::harness::ExperimentConfig {
    use attrgan::attributes::AttributeSchedule;
    use attrgan::gan::{LossKind, TrainingConfig};
    use attrgan::harness::ExperimentConfig;
    use attrgan::metrics::ClassifierConfig;
    ExperimentConfig {
        train_samples: 400,
        test_samples: 200,
        training: TrainingConfig {
            iterations: 20,
            batch_size: 16,
            trace_every: 5,
            eval_every: 10,
            eval_samples: 200,
            generator_hidden: vec![16, 16],
            discriminator_hidden: vec![16, 16],
            ..TrainingConfig::desk(LossKind::WganGp)
        },
        losses: losses.to_vec(),
        fusions: fusions.to_vec(),
        seeds: seeds.to_vec(),
        attribute: AttributeSchedule { hidden: vec![16], max_epochs: 5, ..AttributeSchedule::default() },
        attribute_samples: 200,
        classifier: ClassifierConfig { epochs: 3, ..ClassifierConfig::default() },
        annotated_images: 100,
        permutations: 49,
        ..ExperimentConfig::default()
    }
}
