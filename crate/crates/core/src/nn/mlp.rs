use rand::Rng as _;

use super::linalg::gemm_nt;
use super::tape::{softmax_row, Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::seed;

/// Leak used by every leaky-relu in the suite.
pub const LEAK: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    LeakyRelu,
    Linear,
    Softmax,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::LeakyRelu => "leaky_relu",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "leaky_relu" => Some(Activation::LeakyRelu),
            "linear" => Some(Activation::Linear),
            "softmax" => Some(Activation::Softmax),
            _ => None,
        }
    }
}

/// One dense layer: `weight` is `out x in`, `bias` has `out` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

/// Multi-layer perceptron parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Gradients shaped like an [`Mlp`]: `(weight, bias)` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl MlpGrads {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.is_finite() && b.is_finite())
    }
}

/// Parameters of an [`Mlp`] bound as leaves on a tape. The same binding can
/// be applied to several inputs; gradients accumulate on the shared leaves.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var, Activation)>,
}

impl MlpVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for &(w, b, act) in &self.layers {
            h = tape.linear(h, w, b)?;
            h = match act {
                Activation::LeakyRelu => tape.leaky_relu(h, LEAK)?,
                Activation::Linear => h,
                Activation::Softmax => tape.softmax(h)?,
            };
        }
        Ok(h)
    }

    pub fn grads(&self, g: &Gradients) -> MlpGrads {
        MlpGrads {
            layers: self.layers.iter().map(|&(w, b, _)| (g.wrt(w), g.wrt(b))).collect(),
        }
    }
}

impl Mlp {
    /// Layers of the given widths; every layer but the last uses `hidden`,
    /// the last is linear.
    pub fn init(widths: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        let mut acts = vec![hidden; n];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Linear;
        }
        Self::init_with(widths, &acts, seed)
    }

    /// Layers with one explicit activation per layer.
    ///
    /// Weights are drawn from `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`,
    /// biases start at zero.
    pub fn init_with(widths: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least input and output widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArchitecture(format!("zero width in {widths:?}")));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::InvalidArchitecture(format!(
                "{} activations for {} layers",
                activations.len(),
                widths.len() - 1
            )));
        }
        let mut rng = seed::rng(seed);
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(pair, &activation)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = glorot_bound(fan_in, fan_out);
                let w = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
                Layer {
                    weight: Tensor::matrix(fan_out, fan_in, w),
                    bias: Tensor::zeros(vec![fan_out]),
                    activation,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("no layers".into()));
        }
        for l in &layers {
            if l.bias.len() != l.fan_out() {
                return Err(Error::InvalidArchitecture(format!(
                    "bias of {} entries for {} outputs",
                    l.bias.len(),
                    l.fan_out()
                )));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::InvalidArchitecture(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].fan_out(),
                    pair[1].fan_in()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Tape-free evaluation on a `B x in` matrix (or a single row).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_width() {
            return Err(Error::Shape(format!(
                "input width {} for network expecting {}",
                x.cols(),
                self.input_width()
            )));
        }
        let rows = x.rows();
        let mut h = x.data().to_vec();
        for l in &self.layers {
            let (fan_in, fan_out) = (l.fan_in(), l.fan_out());
            let mut out = Vec::with_capacity(rows * fan_out);
            for _ in 0..rows {
                out.extend_from_slice(l.bias.data());
            }
            gemm_nt(rows, fan_in, fan_out, &h, l.weight.data(), 1.0, &mut out);
            match l.activation {
                Activation::LeakyRelu => out.iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v *= LEAK
                    }
                }),
                Activation::Linear => {}
                Activation::Softmax => {
                    for r in 0..rows {
                        let s = softmax_row(&out[r * fan_out..(r + 1) * fan_out]);
                        out[r * fan_out..(r + 1) * fan_out].copy_from_slice(&s);
                    }
                }
            }
            h = out;
        }
        Ok(Tensor::matrix(rows, self.output_width(), h))
    }

    /// Evaluates on one input vector.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&Tensor::row(x))?.into_data())
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone()), l.activation))
                .collect(),
        }
    }

    /// Records the forward pass on `tape`, returning the output and the
    /// parameter binding needed to read gradients back.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<(Var, MlpVars)> {
        let vars = self.bind(tape);
        let y = vars.apply(tape, x)?;
        Ok((y, vars))
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| (Tensor::zeros(l.weight.shape().to_vec()), Tensor::zeros(l.bias.shape().to_vec())))
                .collect(),
        }
    }
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
