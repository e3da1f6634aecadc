use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{Activation, Parameter};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `activation(W x + b)` with `W` of shape out x in.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Parameter,
    pub bias: Parameter,
    pub activation: Activation,
}

/// Intermediates kept by [`DenseLayer::forward_train`] for the backward pass.
#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Tensor,
    output: Tensor,
}

impl DenseCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl DenseLayer {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        DenseLayer {
            weights: Parameter::uniform(&[outputs, inputs], inputs, rng),
            bias: Parameter::uniform(&[outputs], inputs, rng),
            activation,
        }
    }

    pub fn from_parts(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 2 || bias.shape() != [ws[0]] {
            return Err(Error::shape(&[ws.first().copied().unwrap_or(0)], bias.shape(), "dense bias"));
        }
        Ok(DenseLayer {
            weights: Parameter::new(weights),
            bias: Parameter::new(bias),
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.tensor.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.tensor.shape()[0]
    }

    /// Applies the layer to every row of `x` (any leading shape, last axis
    /// must equal the input dimension).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (inp, out) = (self.inputs(), self.outputs());
        if x.inner_dim() != inp {
            return Err(Error::shape(&[inp], &[x.inner_dim()], format!(
                "dense input {:?} vs weights {:?}",
                x.shape(),
                self.weights.tensor.shape()
            )));
        }
        let rows = x.outer_len();
        let mut y = vec![0.0; rows * out];
        for row in y.chunks_mut(out) {
            row.copy_from_slice(self.bias.values());
        }
        gemm(rows, inp, out, 1.0, x.values(), false, self.weights.values(), true, 1.0, &mut y);
        self.activation.apply(&mut y, out);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("non-scalar input") = out;
        Tensor::from_vec(&shape, y)
    }

    pub fn forward_train(&self, x: &Tensor) -> Result<DenseCache> {
        let output = self.forward(x)?;
        Ok(DenseCache {
            input: x.clone(),
            output,
        })
    }

    /// Backward pass given the gradient w.r.t. the layer output.
    /// Accumulates parameter gradients unless frozen; returns the input gradient.
    pub fn backward(&mut self, cache: &DenseCache, d_out: &Tensor) -> Tensor {
        let mut dz = d_out.values().to_vec();
        self.activation
            .backprop(cache.output.values(), &mut dz, self.outputs());
        self.backward_preactivation(cache, dz)
    }

    /// Backward pass given the gradient w.r.t. the pre-activation `W x + b`.
    pub fn backward_preactivation(&mut self, cache: &DenseCache, dz: Vec<f64>) -> Tensor {
        let (inp, out) = (self.inputs(), self.outputs());
        let rows = cache.input.outer_len();
        if !self.weights.frozen {
            gemm(
                out,
                rows,
                inp,
                1.0,
                &dz,
                true,
                cache.input.values(),
                false,
                1.0,
                self.weights.gradient.values_mut(),
            );
        }
        if !self.bias.frozen {
            let gb = self.bias.gradient.values_mut();
            for row in dz.chunks(out) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
        }
        let mut dx = vec![0.0; rows * inp];
        gemm(rows, out, inp, 1.0, &dz, false, self.weights.values(), false, 0.0, &mut dx);
        Tensor::from_vec(cache.input.shape(), dx).expect("input shape")
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weights, &mut self.bias]
    }

    pub fn params(&self) -> [&Parameter; 2] {
        [&self.weights, &self.bias]
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.weights.frozen = frozen;
        self.bias.frozen = frozen;
    }
}

/// Free-function form of [`DenseLayer::forward`].
pub fn dense_forward(x: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    layer.forward(x)
}

/// The same dense map applied independently at every timestep of a
/// `[T, B, in]` sequence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimeDistributed {
    pub layer: DenseLayer,
}

impl TimeDistributed {
    pub fn new(layer: DenseLayer) -> Self {
        TimeDistributed { layer }
    }

    pub fn forward(&self, seq: &Tensor) -> Result<Tensor> {
        if seq.shape().len() != 3 {
            return Err(Error::shape(&[0, 0, self.layer.inputs()], seq.shape(), "time-distributed input"));
        }
        self.layer.forward(seq)
    }

    pub fn forward_train(&self, seq: &Tensor) -> Result<DenseCache> {
        if seq.shape().len() != 3 {
            return Err(Error::shape(&[0, 0, self.layer.inputs()], seq.shape(), "time-distributed input"));
        }
        self.layer.forward_train(seq)
    }

    pub fn backward(&mut self, cache: &DenseCache, d_out: &Tensor) -> Tensor {
        self.layer.backward(cache, d_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(w: Vec<f64>, out: usize, inp: usize, b: Vec<f64>, act: Activation) -> DenseLayer {
        DenseLayer::from_parts(
            Tensor::from_vec(&[out, inp], w).unwrap(),
            Tensor::from_vec(&[out], b).unwrap(),
            act,
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_tanh_gives_zero() {
        let l = layer(vec![0.0; 6], 3, 2, vec![0.0; 3], Activation::Tanh);
        let x = Tensor::from_vec(&[1, 2], vec![4.0, -9.0]).unwrap();
        assert_eq!(l.forward(&x).unwrap().values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_linear() {
        let l = layer(vec![1.0, 0.0, 0.0, 1.0], 2, 2, vec![0.0; 2], Activation::Linear);
        let x = Tensor::from_vec(&[1, 2], vec![0.3, -0.7]).unwrap();
        assert_eq!(l.forward(&x).unwrap().values(), &[0.3, -0.7]);
    }

    #[test]
    fn sigmoid_hand_arithmetic() {
        let l = layer(vec![1.0, 2.0, 3.0, 4.0], 2, 2, vec![0.5, -0.5], Activation::Sigmoid);
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        let y = l.forward(&x).unwrap();
        // 1 / (1 + e^-3.5), 1 / (1 + e^-6.5)
        assert!((y.values()[0] - 0.970_687_769_248_643_6).abs() < 1e-12);
        assert!((y.values()[1] - 0.998_498_817_743_263).abs() < 1e-12);
        assert!((y.values()[0] - 0.97069).abs() < 5e-6);
        assert!((y.values()[1] - 0.99850).abs() < 5e-6);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let l = layer(vec![0.0; 6], 3, 2, vec![0.0; 3], Activation::Tanh);
        let x = Tensor::from_vec(&[1, 3], vec![0.0; 3]).unwrap();
        let msg = l.forward(&x).unwrap_err().to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = DenseLayer::new(5, 7, Activation::Softmax, &mut rng);
        let x = Tensor::from_vec(&[4, 5], (0..20).map(|i| (i as f64 - 10.0) * 0.9).collect()).unwrap();
        let y = l.forward(&x).unwrap();
        for r in 0..4 {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}
