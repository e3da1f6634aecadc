//! Encoder/decoder network with an optional bottleneck path.
//!
//! Inputs are time-major `[T, B, D]`. The encoder is a stack of LSTM layers;
//! the latent code `z` is the last layer's final hidden state. When a
//! bottleneck is attached, an extra LSTM layer (`A`) consumes the full
//! top-layer sequence and its final state `z'` is mapped back to the width of
//! `z` by a time-distributed dense entry layer (`B`). Either code feeds the
//! shared time-distributed decoder, which sees the code repeated over `T`
//! with a one-hot timestep index appended.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::{DenseCache, DenseLayer, TimeDistributed};
use super::lstm::{LstmCache, LstmLayer};
use super::param::{Activation, Parameter};
use super::tensor::Tensor;
use crate::cascade::Mode;
use crate::data::SequenceWindow;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Bottleneck {
    pub encoder_layer: LstmLayer,
    pub decoder_entry: TimeDistributed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitNetwork {
    pub timesteps: usize,
    pub features: usize,
    pub classes: usize,
    pub encoder: Vec<LstmLayer>,
    pub bottleneck: Option<Bottleneck>,
    pub decoder: Vec<TimeDistributed>,
}

/// A batch of windows laid out time-major.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[T, B, D]`
    pub inputs: Tensor,
    /// Class per `(t, b)`, index `t * B + b`.
    pub targets: Vec<usize>,
}

impl Batch {
    pub fn from_windows<'a, I>(windows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a SequenceWindow>,
    {
        let ws: Vec<&SequenceWindow> = windows.into_iter().collect();
        let first = ws
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (t_len, d) = (first.timesteps(), first.features());
        let b = ws.len();
        let mut inputs = vec![0.0; t_len * b * d];
        let mut targets = vec![0; t_len * b];
        for (bi, w) in ws.iter().enumerate() {
            if w.timesteps() != t_len || w.features() != d {
                return Err(Error::shape(&[t_len, d], &[w.timesteps(), w.features()], "window in batch"));
            }
            for t in 0..t_len {
                inputs[(t * b + bi) * d..(t * b + bi + 1) * d].copy_from_slice(w.step(t));
                targets[t * b + bi] = w.targets[t];
            }
        }
        Ok(Batch {
            inputs: Tensor::from_vec(&[t_len, b, d], inputs)?,
            targets,
        })
    }

    pub fn size(&self) -> usize {
        self.inputs.shape()[1]
    }
}

/// Everything recorded by a training forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub mode: Mode,
    encoder: Vec<LstmCache>,
    bottleneck: Option<(LstmCache, DenseCache)>,
    decoder: Vec<DenseCache>,
}

impl ForwardPass {
    /// Class probabilities `[T, B, K]`.
    pub fn probs(&self) -> &Tensor {
        self.decoder.last().expect("decoder has layers").output()
    }

    pub fn code(&self) -> Tensor {
        match &self.bottleneck {
            Some((a, _)) if self.mode == Mode::Compressed => last_step(&a.output.hidden),
            _ => last_step(&self.encoder.last().expect("encoder has layers").output.hidden),
        }
    }
}

fn last_step(seq: &Tensor) -> Tensor {
    let s = seq.shape();
    let (t_len, b, h) = (s[0], s[1], s[2]);
    Tensor::from_vec(&[b, h], seq.values()[(t_len - 1) * b * h..].to_vec()).expect("slice shape")
}

/// Repeats `[B, H]` over `T` steps as `[T, B, H]`.
fn repeat_code(code: &Tensor, t_len: usize) -> Tensor {
    let mut v = Vec::with_capacity(code.len() * t_len);
    for _ in 0..t_len {
        v.extend_from_slice(code.values());
    }
    let s = code.shape();
    Tensor::from_vec(&[t_len, s[0], s[1]], v).expect("repeat shape")
}

/// `[T, B, H]` -> `[T, B, H + T]` with a one-hot timestep appended.
fn with_timestep(seq: &Tensor) -> Tensor {
    let s = seq.shape();
    let (t_len, b, h) = (s[0], s[1], s[2]);
    let w = h + t_len;
    let mut v = vec![0.0; t_len * b * w];
    for t in 0..t_len {
        for bi in 0..b {
            let row = &mut v[(t * b + bi) * w..(t * b + bi + 1) * w];
            row[..h].copy_from_slice(&seq.values()[(t * b + bi) * h..(t * b + bi + 1) * h]);
            row[h + t] = 1.0;
        }
    }
    Tensor::from_vec(&[t_len, b, w], v).expect("timestep shape")
}

/// Sums a `[T, B, W]` gradient over time, keeping the first `h` columns.
fn sum_over_time(grad: &Tensor, h: usize) -> Tensor {
    let s = grad.shape();
    let (t_len, b, w) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; b * h];
    for t in 0..t_len {
        for bi in 0..b {
            let row = &grad.values()[(t * b + bi) * w..(t * b + bi) * w + h];
            out[bi * h..(bi + 1) * h]
                .iter_mut()
                .zip(row)
                .for_each(|(o, g)| *o += g);
        }
    }
    Tensor::from_vec(&[b, h], out).expect("sum shape")
}

/// Hidden-state gradient that is nonzero only at the last step.
fn last_step_grad(d_code: &Tensor, t_len: usize) -> Tensor {
    let s = d_code.shape();
    let mut v = vec![0.0; t_len * s[0] * s[1]];
    v[(t_len - 1) * d_code.len()..].copy_from_slice(d_code.values());
    Tensor::from_vec(&[t_len, s[0], s[1]], v).expect("grad shape")
}

impl SplitNetwork {
    /// Builds a phase-1 network (no bottleneck).
    pub fn new<R: Rng>(
        timesteps: usize,
        features: usize,
        classes: usize,
        encoder_sizes: &[usize],
        decoder_sizes: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if encoder_sizes.is_empty() || encoder_sizes.contains(&0) {
            return Err(Error::Config("encoder needs at least one non-empty LSTM layer".into()));
        }
        if timesteps == 0 || features == 0 || classes < 2 {
            return Err(Error::Config(format!(
                "invalid network dims T={timesteps} D={features} K={classes}"
            )));
        }
        let mut encoder = Vec::new();
        let mut width = features;
        for &cells in encoder_sizes {
            encoder.push(LstmLayer::new(width, cells, rng));
            width = cells;
        }
        let mut decoder = Vec::new();
        let mut width = width + timesteps;
        for &units in decoder_sizes {
            decoder.push(TimeDistributed::new(DenseLayer::new(width, units, Activation::Tanh, rng)));
            width = units;
        }
        decoder.push(TimeDistributed::new(DenseLayer::new(width, classes, Activation::Softmax, rng)));
        Ok(SplitNetwork {
            timesteps,
            features,
            classes,
            encoder,
            bottleneck: None,
            decoder,
        })
    }

    pub fn code_dim(&self, mode: Mode) -> Result<usize> {
        match mode {
            Mode::Informative => Ok(self.encoder.last().expect("encoder has layers").cells),
            Mode::Compressed => self
                .bottleneck
                .as_ref()
                .map(|b| b.encoder_layer.cells)
                .ok_or_else(|| Error::Contract("compressed mode requires a bottleneck".into())),
        }
    }

    fn check_input(&self, inputs: &Tensor) -> Result<()> {
        let s = inputs.shape();
        if s.len() != 3 || s[0] != self.timesteps || s[2] != self.features {
            return Err(Error::shape(&[self.timesteps, 0, self.features], s, "network input [T, B, D]"));
        }
        Ok(())
    }

    /// UE side: computes the latent code `[B, dim]` for the given mode.
    pub fn encode(&self, inputs: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(inputs)?;
        let mut seq = inputs.clone();
        for layer in &self.encoder {
            seq = layer.forward(&seq)?.hidden;
        }
        match mode {
            Mode::Informative => Ok(last_step(&seq)),
            Mode::Compressed => {
                let b = self
                    .bottleneck
                    .as_ref()
                    .ok_or_else(|| Error::Contract("compressed mode requires a bottleneck".into()))?;
                Ok(last_step(&b.encoder_layer.forward(&seq)?.hidden))
            }
        }
    }

    /// Edge side: maps a latent code `[B, dim]` to class probabilities `[T, B, K]`.
    pub fn decode(&self, code: &Tensor, mode: Mode) -> Result<Tensor> {
        let dim = self.code_dim(mode)?;
        if code.shape().len() != 2 || code.inner_dim() != dim {
            return Err(Error::shape(&[0, dim], code.shape(), format!("{mode:?} code")));
        }
        let mut seq = repeat_code(code, self.timesteps);
        if mode == Mode::Compressed {
            let b = self.bottleneck.as_ref().expect("checked by code_dim");
            seq = b.decoder_entry.forward(&seq)?;
        }
        let mut x = with_timestep(&seq);
        for layer in &self.decoder {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward(&self, inputs: &Tensor, mode: Mode) -> Result<Tensor> {
        let code = self.encode(inputs, mode)?;
        self.decode(&code, mode)
    }

    /// Hidden sequences `[T, B, H]` of every encoder layer, bottleneck last.
    pub fn encoder_states(&self, inputs: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(inputs)?;
        let mut out: Vec<Tensor> = Vec::new();
        let mut seq = inputs.clone();
        for layer in &self.encoder {
            seq = layer.forward(&seq)?.hidden;
            out.push(seq.clone());
        }
        if let Some(b) = &self.bottleneck {
            out.push(b.encoder_layer.forward(&seq)?.hidden);
        }
        Ok(out)
    }

    pub fn forward_train(&self, batch: &Batch, mode: Mode) -> Result<ForwardPass> {
        self.check_input(&batch.inputs)?;
        let mut encoder = Vec::with_capacity(self.encoder.len());
        let mut seq = batch.inputs.clone();
        for layer in &self.encoder {
            let cache = layer.forward_train(&seq)?;
            seq = cache.output.hidden.clone();
            encoder.push(cache);
        }
        let (code_seq, bottleneck) = match mode {
            Mode::Informative => (repeat_code(&last_step(&seq), self.timesteps), None),
            Mode::Compressed => {
                let b = self
                    .bottleneck
                    .as_ref()
                    .ok_or_else(|| Error::Contract("compressed mode requires a bottleneck".into()))?;
                let a_cache = b.encoder_layer.forward_train(&seq)?;
                let rep = repeat_code(&last_step(&a_cache.output.hidden), self.timesteps);
                let b_cache = b.decoder_entry.forward_train(&rep)?;
                (b_cache.output().clone(), Some((a_cache, b_cache)))
            }
        };
        let mut decoder = Vec::with_capacity(self.decoder.len());
        let mut x = with_timestep(&code_seq);
        for layer in &self.decoder {
            let cache = layer.forward_train(&x)?;
            x = cache.output().clone();
            decoder.push(cache);
        }
        if !x.all_finite() {
            return Err(Error::NonFinite {
                context: "decoder output".into(),
                timestep: 0,
            });
        }
        Ok(ForwardPass {
            mode,
            encoder,
            bottleneck,
            decoder,
        })
    }

    /// Mean per-timestep cross-entropy (nats).
    pub fn loss(probs: &Tensor, targets: &[usize]) -> f64 {
        let k = probs.inner_dim();
        let n = targets.len();
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(i, &y)| -probs.values()[i * k + y].max(f64::MIN_POSITIVE).ln())
            .sum();
        total / n as f64
    }

    fn encoder_trainable_below(&self, layer: usize) -> bool {
        self.encoder[..layer]
            .iter()
            .any(|l| l.params().iter().any(|p| !p.frozen))
    }

    /// Accumulates gradients of the mean cross-entropy into every non-frozen
    /// parameter. Call [`SplitNetwork::zero_grad`] first.
    pub fn backward(&mut self, pass: &ForwardPass, targets: &[usize]) -> Result<()> {
        let probs = pass.probs();
        let k = probs.inner_dim();
        if targets.len() * k != probs.len() {
            return Err(Error::shape(&[probs.outer_len()], &[targets.len()], "targets"));
        }
        let n = targets.len() as f64;
        let mut dz: Vec<f64> = probs.values().to_vec();
        for (i, &y) in targets.iter().enumerate() {
            dz[i * k + y] -= 1.0;
        }
        dz.iter_mut().for_each(|v| *v /= n);

        let last = self.decoder.len() - 1;
        let mut grad = self.decoder[last]
            .layer
            .backward_preactivation(&pass.decoder[last], dz);
        for i in (0..last).rev() {
            grad = self.decoder[i].backward(&pass.decoder[i], &grad);
        }
        let t_len = self.timesteps;
        let top = self.encoder.len() - 1;
        let top_cells = self.encoder[top].cells;

        let d_top_seq = match (&pass.bottleneck, pass.mode) {
            (Some((a_cache, b_cache)), Mode::Compressed) => {
                let b = self.bottleneck.as_mut().expect("pass has bottleneck caches");
                let d_entry_out = slice_cols(&grad, top_cells);
                let d_rep = b.decoder_entry.backward(b_cache, &d_entry_out);
                let d_code = sum_over_time(&d_rep, b.encoder_layer.cells);
                let want = self.encoder.iter().any(|l| l.params().iter().any(|p| !p.frozen));
                let b = self.bottleneck.as_mut().expect("checked");
                b.encoder_layer
                    .backward(a_cache, &last_step_grad(&d_code, t_len), want)
            }
            _ => {
                let d_code = sum_over_time(&grad, top_cells);
                Some(last_step_grad(&d_code, t_len))
            }
        };

        let mut d_seq = d_top_seq;
        for l in (0..self.encoder.len()).rev() {
            let Some(d) = d_seq.take() else { break };
            let layer_trainable = self.encoder[l].params().iter().any(|p| !p.frozen);
            let want = self.encoder_trainable_below(l);
            if !layer_trainable && !want {
                break;
            }
            d_seq = self.encoder[l].backward(&pass.encoder[l], &d, want);
        }
        Ok(())
    }

    /// All parameters in a fixed order: encoder, bottleneck (A then B), decoder.
    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v: Vec<&mut Parameter> = Vec::new();
        for l in &mut self.encoder {
            v.extend(l.params_mut());
        }
        if let Some(b) = &mut self.bottleneck {
            v.extend(b.encoder_layer.params_mut());
            v.extend(b.decoder_entry.layer.params_mut());
        }
        for l in &mut self.decoder {
            v.extend(l.layer.params_mut());
        }
        v
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut v: Vec<&Parameter> = Vec::new();
        for l in &self.encoder {
            v.extend(l.params());
        }
        if let Some(b) = &self.bottleneck {
            v.extend(b.encoder_layer.params());
            v.extend(b.decoder_entry.layer.params());
        }
        for l in &self.decoder {
            v.extend(l.layer.params());
        }
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.tensor.all_finite())
    }
}

fn slice_cols(grad: &Tensor, h: usize) -> Tensor {
    let s = grad.shape();
    let (t_len, b, w) = (s[0], s[1], s[2]);
    let mut v = Vec::with_capacity(t_len * b * h);
    for row in grad.values().chunks(w) {
        v.extend_from_slice(&row[..h]);
    }
    Tensor::from_vec(&[t_len, b, h], v).expect("slice shape")
}

/// Hidden states of one layer over a probe batch at one epoch, stored
/// sample-major as `[n, T, units]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerActivations {
    /// 1-based encoder layer index; the bottleneck layer is `L + 1`.
    pub layer: usize,
    pub epoch: usize,
    pub samples: usize,
    pub timesteps: usize,
    pub units: usize,
    pub values: Vec<f64>,
}

impl LayerActivations {
    pub fn from_time_major(layer: usize, epoch: usize, seq: &Tensor) -> Self {
        let s = seq.shape();
        let (t_len, n, u) = (s[0], s[1], s[2]);
        let mut values = vec![0.0; n * t_len * u];
        for t in 0..t_len {
            for i in 0..n {
                values[(i * t_len + t) * u..(i * t_len + t + 1) * u]
                    .copy_from_slice(&seq.values()[(t * n + i) * u..(t * n + i + 1) * u]);
            }
        }
        LayerActivations {
            layer,
            epoch,
            samples: n,
            timesteps: t_len,
            units: u,
            values,
        }
    }

    /// Hidden state of sample `i` at 1-based timestep `t`.
    pub fn state(&self, i: usize, t: usize) -> &[f64] {
        let u = self.units;
        let off = (i * self.timesteps + (t - 1)) * u;
        &self.values[off..off + u]
    }

    /// `[n, units]` matrix of states at 1-based timestep `t`.
    pub fn at_timestep(&self, t: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.samples * self.units);
        for i in 0..self.samples {
            v.extend_from_slice(self.state(i, t));
        }
        v
    }

    /// `[n, len * units]` concatenation of timesteps `ts` (1-based) per sample.
    pub fn concat_timesteps(&self, ts: &[usize]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.samples * self.units * ts.len());
        for i in 0..self.samples {
            for &t in ts {
                v.extend_from_slice(self.state(i, t));
            }
        }
        v
    }
}

/// Records every encoder layer's hidden sequence on a fixed probe batch.
pub fn record_activations(network: &SplitNetwork, probe: &Tensor, epoch: usize) -> Result<Vec<LayerActivations>> {
    Ok(network
        .encoder_states(probe)?
        .iter()
        .enumerate()
        .map(|(i, seq)| LayerActivations::from_time_major(i + 1, epoch, seq))
        .collect())
}

/// Sample-by-sample layout helper: `[B, T, D]` windows to time-major.
pub fn time_major(windows: &[SequenceWindow]) -> Result<Tensor> {
    Ok(Batch::from_windows(windows)?.inputs)
}
