use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::he_normal;
use crate::autodiff::{Graph, HasParams, Param, Tensor, Var};
use crate::error::{Error, Result};

/// Default negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu(s) => g.leaky_relu(x, s),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// How a forward pass binds parameters into the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    Trainable,
    /// Parameters enter as constants and never receive gradients.
    Frozen,
}

impl Binding {
    fn bind(self, g: &mut Graph, p: &Param) -> Var {
        match self {
            Binding::Trainable => g.param(p),
            Binding::Frozen => g.frozen(p),
        }
    }
}

/// Affine map `x·W + b` on a `(B, in)` batch.
///
/// The weight is stored input-major (`in × out`) so the forward pass is a
/// single matrix product without a transpose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: Param,
    pub bias: Param,
}

impl LinearLayer {
    /// He-initialized weight, zero bias.
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, output: usize, rng: &mut R) -> Result<Self> {
        if output == 0 {
            return Err(Error::contract(format!("{name}: output width must be positive")));
        }
        let w = he_normal(input, input * output, rng)?;
        Ok(LinearLayer {
            weight: Param::new(format!("{name}.weight"), Tensor::new(vec![input, output], w)?),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[output])),
        })
    }

    pub fn zeros(name: &str, input: usize, output: usize) -> Self {
        LinearLayer {
            weight: Param::new(format!("{name}.weight"), Tensor::zeros(&[input, output])),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[output])),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, x: Var, binding: Binding) -> Result<Var> {
        let w = binding.bind(g, &self.weight);
        let b = binding.bind(g, &self.bias);
        let xw = g.matmul(x, w)?;
        g.add(xw, b)
    }

    pub fn zero_(&mut self) {
        self.weight.value.data_mut().fill(0.0);
        self.bias.value.data_mut().fill(0.0);
    }
}

impl HasParams for LinearLayer {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Two linear maps with an activation between them, plus a linear
/// shortcut projecting the input to the same width; the outputs are summed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub first: LinearLayer,
    pub second: LinearLayer,
    pub shortcut: LinearLayer,
    pub activation: Activation,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ResidualBlock {
            first: LinearLayer::new(&format!("{name}.main0"), input, output, rng)?,
            second: LinearLayer::new(&format!("{name}.main1"), output, output, rng)?,
            shortcut: LinearLayer::new(&format!("{name}.shortcut"), input, output, rng)?,
            activation,
        })
    }

    pub fn output_width(&self) -> usize {
        self.shortcut.output_width()
    }

    pub fn forward(&self, g: &mut Graph, x: Var, binding: Binding) -> Result<Var> {
        let h = self.first.forward(g, x, binding)?;
        let h = self.activation.apply(g, h);
        let main = self.second.forward(g, h, binding)?;
        let short = self.shortcut.forward(g, x, binding)?;
        g.add(main, short)
    }
}

impl HasParams for ResidualBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.first.params();
        v.extend(self.second.params());
        v.extend(self.shortcut.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.first.params_mut();
        v.extend(self.second.params_mut());
        v.extend(self.shortcut.params_mut());
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockSpec {
    Linear { width: usize },
    Residual { width: usize },
}

/// Architecture of an [`Mlp`]: hidden blocks followed by a final linear map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<BlockSpec>,
    pub output: usize,
    /// Applied after every hidden block.
    pub activation: Activation,
    pub output_activation: Activation,
}

impl MlpSpec {
    pub fn relu(input: usize, hidden: &[usize], output: usize) -> Self {
        MlpSpec {
            input,
            hidden: hidden.iter().map(|&width| BlockSpec::Linear { width }).collect(),
            output,
            activation: Activation::Relu,
            output_activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 {
            return Err(Error::contract("mlp widths must be positive"));
        }
        for b in &self.hidden {
            let (BlockSpec::Linear { width } | BlockSpec::Residual { width }) = b;
            if *width == 0 {
                return Err(Error::contract("mlp hidden widths must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Linear(LinearLayer),
    Residual(ResidualBlock),
}

impl Layer {
    fn forward(&self, g: &mut Graph, x: Var, binding: Binding) -> Result<Var> {
        match self {
            Layer::Linear(l) => l.forward(g, x, binding),
            Layer::Residual(r) => r.forward(g, x, binding),
        }
    }

    fn output_width(&self) -> usize {
        match self {
            Layer::Linear(l) => l.output_width(),
            Layer::Residual(r) => r.output_width(),
        }
    }
}

/// Feed-forward network of linear and residual blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

/// Output of a forward pass that also exposes the penultimate features.
#[derive(Clone, Copy, Debug)]
pub struct MlpOutput {
    pub features: Var,
    pub output: Var,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
        let mut width = spec.input;
        for (i, b) in spec.hidden.iter().enumerate() {
            let name = format!("block{i}");
            let layer = match *b {
                BlockSpec::Linear { width: w } => Layer::Linear(LinearLayer::new(&name, width, w, rng)?),
                BlockSpec::Residual { width: w } => {
                    Layer::Residual(ResidualBlock::new(&name, width, w, spec.activation, rng)?)
                }
            };
            width = layer.output_width();
            layers.push(layer);
        }
        layers.push(Layer::Linear(LinearLayer::new("out", width, spec.output, rng)?));
        Ok(Mlp { spec, layers })
    }

    pub fn input_width(&self) -> usize {
        self.spec.input
    }

    pub fn output_width(&self) -> usize {
        self.spec.output
    }

    /// Width of the features entering the final linear map.
    pub fn feature_width(&self) -> usize {
        self.layers
            .len()
            .checked_sub(2)
            .map(|i| self.layers[i].output_width())
            .unwrap_or(self.spec.input)
    }

    pub fn forward_features(&self, g: &mut Graph, x: Var, binding: Binding) -> Result<MlpOutput> {
        let width = g.value(x).cols();
        if width != self.spec.input {
            return Err(Error::Shape {
                op: "mlp_forward",
                lhs: g.value(x).shape().to_vec(),
                rhs: vec![self.spec.input],
            });
        }
        let (last, hidden) = self.layers.split_last().expect("mlp has an output layer");
        let mut h = x;
        for layer in hidden {
            h = layer.forward(g, h, binding)?;
            h = self.spec.activation.apply(g, h);
        }
        let out = last.forward(g, h, binding)?;
        let out = self.spec.output_activation.apply(g, out);
        Ok(MlpOutput {
            features: h,
            output: out,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, binding: Binding) -> Result<Var> {
        Ok(self.forward_features(g, x, binding)?.output)
    }

    /// Forward pass on plain values, no gradients kept.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, xv, Binding::Frozen)?;
        Ok(g.value(y).clone())
    }

    pub fn zero_(&mut self) {
        for p in self.params_mut() {
            p.value.data_mut().fill(0.0);
        }
    }
}

impl HasParams for Mlp {
    fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Linear(x) => x.params(),
                Layer::Residual(x) => x.params(),
            })
            .collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Linear(x) => x.params_mut(),
                Layer::Residual(x) => x.params_mut(),
            })
            .collect()
    }
}
