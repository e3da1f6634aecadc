use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// A trainable tensor with its gradient accumulator and freeze flag.
///
/// Gradients are not serialized; a deserialized parameter starts with a
/// zeroed gradient of the right shape.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "ParameterRepr", into = "ParameterRepr")]
pub struct Parameter {
    pub tensor: Tensor,
    pub gradient: Tensor,
    pub frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct ParameterRepr {
    tensor: Tensor,
    frozen: bool,
}

impl From<ParameterRepr> for Parameter {
    fn from(r: ParameterRepr) -> Self {
        let gradient = Tensor::zeros(r.tensor.shape());
        Parameter {
            tensor: r.tensor,
            gradient,
            frozen: r.frozen,
        }
    }
}

impl From<Parameter> for ParameterRepr {
    fn from(p: Parameter) -> Self {
        ParameterRepr {
            tensor: p.tensor,
            frozen: p.frozen,
        }
    }
}

impl Parameter {
    pub fn new(tensor: Tensor) -> Self {
        let gradient = Tensor::zeros(tensor.shape());
        Parameter {
            tensor,
            gradient,
            frozen: false,
        }
    }

    /// Uniform initialization in `±1/sqrt(fan_in)`.
    pub fn uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Parameter::new(Tensor::from_vec(shape, values).expect("shape product matches"))
    }

    pub fn zero_grad(&mut self) {
        self.gradient.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        self.tensor.values()
    }
}

/// Pointwise nonlinearity applied after the affine map of a dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
    Softmax,
    Linear,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    /// Applies the activation in place to each row of width `dim`.
    pub(crate) fn apply(self, values: &mut [f64], dim: usize) {
        match self {
            Activation::Tanh => values.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Sigmoid => values.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Relu => values.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Linear => {}
            Activation::Softmax => {
                for row in values.chunks_mut(dim) {
                    softmax_in_place(row);
                }
            }
        }
    }

    /// Converts a gradient w.r.t. the activation output into a gradient
    /// w.r.t. the pre-activation, given the activation output `y`.
    pub(crate) fn backprop(self, y: &[f64], grad: &mut [f64], dim: usize) {
        match self {
            Activation::Tanh => grad
                .iter_mut()
                .zip(y)
                .for_each(|(g, &y)| *g *= 1.0 - y * y),
            Activation::Sigmoid => grad
                .iter_mut()
                .zip(y)
                .for_each(|(g, &y)| *g *= y * (1.0 - y)),
            Activation::Relu => grad
                .iter_mut()
                .zip(y)
                .for_each(|(g, &y)| {
                    if y <= 0.0 {
                        *g = 0.0
                    }
                }),
            Activation::Linear => {}
            Activation::Softmax => {
                for (g, y) in grad.chunks_mut(dim).zip(y.chunks(dim)) {
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    g.iter_mut().zip(y).for_each(|(g, &y)| *g = y * (*g - dot));
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
