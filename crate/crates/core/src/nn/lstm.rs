use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{sigmoid, Parameter};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// LSTM layer. Gate blocks are stacked row-wise in the order
/// input, forget, candidate, output: `input_weights` is `4H x D`,
/// `recurrent_weights` is `4H x H` and `bias` is `4H`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input_weights: Parameter,
    pub recurrent_weights: Parameter,
    pub bias: Parameter,
    pub cells: usize,
}

/// Per-timestep hidden and cell states of a batch, both `[T, B, H]`.
#[derive(Clone, Debug)]
pub struct LstmOutput {
    pub hidden: Tensor,
    pub cell: Tensor,
}

/// Intermediates needed for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmCache {
    input: Tensor,
    /// Post-nonlinearity gates `[T, B, 4H]`.
    gates: Vec<f64>,
    pub output: LstmOutput,
}

impl LstmLayer {
    pub fn new<R: Rng>(inputs: usize, cells: usize, rng: &mut R) -> Self {
        let fan_in = inputs + cells;
        LstmLayer {
            input_weights: Parameter::uniform(&[4 * cells, inputs], fan_in, rng),
            recurrent_weights: Parameter::uniform(&[4 * cells, cells], fan_in, rng),
            bias: Parameter::uniform(&[4 * cells], fan_in, rng),
            cells,
        }
    }

    pub fn from_parts(input_weights: Tensor, recurrent_weights: Tensor, bias: Tensor) -> Result<Self> {
        let cells = recurrent_weights.shape().get(1).copied().unwrap_or(0);
        let h4 = 4 * cells;
        if cells == 0 || recurrent_weights.shape() != [h4, cells] {
            return Err(Error::shape(&[h4, cells], recurrent_weights.shape(), "lstm recurrent weights"));
        }
        if input_weights.shape().len() != 2 || input_weights.shape()[0] != h4 {
            return Err(Error::shape(&[h4, 0], input_weights.shape(), "lstm input weights"));
        }
        if bias.shape() != [h4] {
            return Err(Error::shape(&[h4], bias.shape(), "lstm bias"));
        }
        Ok(LstmLayer {
            input_weights: Parameter::new(input_weights),
            recurrent_weights: Parameter::new(recurrent_weights),
            bias: Parameter::new(bias),
            cells,
        })
    }

    pub fn inputs(&self) -> usize {
        self.input_weights.tensor.shape()[1]
    }

    /// Runs the recurrence over a time-major batch `[T, B, D]` from zero state.
    pub fn forward(&self, seq: &Tensor) -> Result<LstmOutput> {
        Ok(self.forward_train(seq)?.output)
    }

    pub fn forward_train(&self, seq: &Tensor) -> Result<LstmCache> {
        let s = seq.shape();
        if s.len() != 3 {
            return Err(Error::shape(&[0, 0, self.inputs()], s, "lstm input [T, B, D]"));
        }
        let (t_len, batch) = (s[0], s[1]);
        let h0 = vec![0.0; batch * self.cells];
        self.run(seq, &h0, &h0.clone()).map(|(gates, output)| LstmCache {
            input: seq.clone(),
            gates,
            output,
        })
        .map_err(|e| match e {
            Error::NonFinite { timestep, .. } => Error::NonFinite {
                context: format!("lstm forward (T={t_len}, B={batch})"),
                timestep,
            },
            other => other,
        })
    }

    fn run(&self, seq: &Tensor, h0: &[f64], c0: &[f64]) -> Result<(Vec<f64>, LstmOutput)> {
        let s = seq.shape();
        let (t_len, batch, d) = (s[0], s[1], s[2]);
        if d != self.inputs() {
            return Err(Error::shape(
                &[t_len, batch, self.inputs()],
                s,
                format!("lstm input vs weights {:?}", self.input_weights.tensor.shape()),
            ));
        }
        let h = self.cells;
        let h4 = 4 * h;
        let rows = t_len * batch;

        // Input projections for all timesteps at once.
        let mut gates = vec![0.0; rows * h4];
        for row in gates.chunks_mut(h4) {
            row.copy_from_slice(self.bias.values());
        }
        gemm(rows, d, h4, 1.0, seq.values(), false, self.input_weights.values(), true, 1.0, &mut gates);

        let mut hidden = vec![0.0; rows * h];
        let mut cell = vec![0.0; rows * h];
        let u = self.recurrent_weights.values();
        for t in 0..t_len {
            let start = t * batch * h;
            let (h_done, h_rest) = hidden.split_at_mut(start);
            let (c_done, c_rest) = cell.split_at_mut(start);
            let (h_prev, c_prev): (&[f64], &[f64]) = if t == 0 {
                (h0, c0)
            } else {
                (&h_done[start - batch * h..], &c_done[start - batch * h..])
            };
            let z = &mut gates[t * batch * h4..(t + 1) * batch * h4];
            gemm(batch, h, h4, 1.0, h_prev, false, u, true, 1.0, z);
            let hs = &mut h_rest[..batch * h];
            let cs = &mut c_rest[..batch * h];
            for b in 0..batch {
                let zr = &mut z[b * h4..(b + 1) * h4];
                for j in 0..h {
                    let i_g = sigmoid(zr[j]);
                    let f_g = sigmoid(zr[h + j]);
                    let g_g = zr[2 * h + j].tanh();
                    let o_g = sigmoid(zr[3 * h + j]);
                    zr[j] = i_g;
                    zr[h + j] = f_g;
                    zr[2 * h + j] = g_g;
                    zr[3 * h + j] = o_g;
                    let c = f_g * c_prev[b * h + j] + i_g * g_g;
                    cs[b * h + j] = c;
                    hs[b * h + j] = o_g * c.tanh();
                }
            }
            if !hs.iter().all(|v| v.is_finite()) || !cs.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "lstm forward".into(),
                    timestep: t + 1,
                });
            }
        }
        Ok((
            gates,
            LstmOutput {
                hidden: Tensor::from_vec(&[t_len, batch, h], hidden)?,
                cell: Tensor::from_vec(&[t_len, batch, h], cell)?,
            },
        ))
    }

    /// Backpropagation through time. `d_hidden` is the loss gradient w.r.t.
    /// every hidden output `[T, B, H]`. Parameter gradients accumulate unless
    /// frozen. Returns the input gradient `[T, B, D]` when `want_input_grad`.
    pub fn backward(&mut self, cache: &LstmCache, d_hidden: &Tensor, want_input_grad: bool) -> Option<Tensor> {
        let s = cache.input.shape();
        let (t_len, batch, d) = (s[0], s[1], s[2]);
        let h = self.cells;
        let h4 = 4 * h;
        let rows = t_len * batch;
        let hidden = cache.output.hidden.values();
        let cell = cache.output.cell.values();
        let dh_out = d_hidden.values();

        let mut dz_all = vec![0.0; rows * h4];
        let mut dh_next = vec![0.0; batch * h];
        let mut dc_next = vec![0.0; batch * h];
        let u = self.recurrent_weights.values();

        for t in (0..t_len).rev() {
            let g = &cache.gates[t * batch * h4..(t + 1) * batch * h4];
            let dz = &mut dz_all[t * batch * h4..(t + 1) * batch * h4];
            for b in 0..batch {
                let gr = &g[b * h4..(b + 1) * h4];
                let dzr = &mut dz[b * h4..(b + 1) * h4];
                for j in 0..h {
                    let idx = b * h + j;
                    let (i_g, f_g, g_g, o_g) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let c = cell[t * batch * h + idx];
                    let c_prev = if t == 0 { 0.0 } else { cell[(t - 1) * batch * h + idx] };
                    let tc = c.tanh();
                    let dh = dh_out[t * batch * h + idx] + dh_next[idx];
                    let d_o = dh * tc;
                    let dc = dh * o_g * (1.0 - tc * tc) + dc_next[idx];
                    let d_i = dc * g_g;
                    let d_g = dc * i_g;
                    let d_f = dc * c_prev;
                    dc_next[idx] = dc * f_g;
                    dzr[j] = d_i * i_g * (1.0 - i_g);
                    dzr[h + j] = d_f * f_g * (1.0 - f_g);
                    dzr[2 * h + j] = d_g * (1.0 - g_g * g_g);
                    dzr[3 * h + j] = d_o * o_g * (1.0 - o_g);
                }
            }
            if t > 0 {
                gemm(batch, h4, h, 1.0, dz, false, u, false, 0.0, &mut dh_next);
            }
        }

        if !self.input_weights.frozen {
            gemm(
                h4,
                rows,
                d,
                1.0,
                &dz_all,
                true,
                cache.input.values(),
                false,
                1.0,
                self.input_weights.gradient.values_mut(),
            );
        }
        if !self.recurrent_weights.frozen && t_len > 1 {
            // h_{t-1} for t >= 1; the t = 0 term vanishes since h0 = 0.
            let n = (t_len - 1) * batch;
            gemm(
                h4,
                n,
                h,
                1.0,
                &dz_all[batch * h4..],
                true,
                &hidden[..n * h],
                false,
                1.0,
                self.recurrent_weights.gradient.values_mut(),
            );
        }
        if !self.bias.frozen {
            let gb = self.bias.gradient.values_mut();
            for row in dz_all.chunks(h4) {
                gb.iter_mut().zip(row).for_each(|(g, v)| *g += v);
            }
        }
        if want_input_grad {
            let mut dx = vec![0.0; rows * d];
            gemm(rows, h4, d, 1.0, &dz_all, false, self.input_weights.values(), false, 0.0, &mut dx);
            Some(Tensor::from_vec(&[t_len, batch, d], dx).expect("input shape"))
        } else {
            None
        }
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 3] {
        [&mut self.input_weights, &mut self.recurrent_weights, &mut self.bias]
    }

    pub fn params(&self) -> [&Parameter; 3] {
        [&self.input_weights, &self.recurrent_weights, &self.bias]
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in self.params_mut() {
            p.frozen = frozen;
        }
    }
}

/// Runs one sequence `[T, D]` from explicit initial states `h0`, `c0`
/// (each of length `cells`). Returns hidden and cell sequences `[T, cells]`.
pub fn lstm_forward(seq: &Tensor, layer: &LstmLayer, h0: &Tensor, c0: &Tensor) -> Result<(Tensor, Tensor)> {
    let s = seq.shape();
    if s.len() != 2 {
        return Err(Error::shape(&[0, layer.inputs()], s, "lstm_forward sequence [T, D]"));
    }
    for (name, st) in [("h0", h0), ("c0", c0)] {
        if st.len() != layer.cells {
            return Err(Error::shape(&[layer.cells], st.shape(), format!("lstm_forward {name}")));
        }
    }
    let t_len = s[0];
    let seq3 = seq.clone().reshape(&[t_len, 1, s[1]])?;
    let (_, out) = layer.run(&seq3, h0.values(), c0.values())?;
    Ok((
        out.hidden.reshape(&[t_len, layer.cells])?,
        out.cell.reshape(&[t_len, layer.cells])?,
    ))
}
