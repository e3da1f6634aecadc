use serde::{Deserialize, Serialize};

use super::param::Parameter;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the global gradient norm to at most this value.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
            ..Default::default()
        }
    }
}

/// Optimizer state. Parameters must be passed in the same order on every
/// step; moment buffers are matched by position.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every non-frozen parameter. Frozen parameters
    /// are not touched.
    pub fn step(&mut self, params: &mut [&mut Parameter]) {
        if self.first.len() != params.len() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.step += 1;
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm: f64 = params
                    .iter()
                    .filter(|p| !p.frozen)
                    .flat_map(|p| p.gradient.values())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let cfg = &self.config;
        for (i, p) in params.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let Parameter { tensor, gradient, .. } = &mut **p;
            let grads = gradient.values();
            let values = tensor.values_mut();
            match cfg.kind {
                OptimizerKind::Sgd => {
                    for (v, g) in values.iter_mut().zip(grads) {
                        *v -= cfg.lr * g * scale;
                    }
                }
                OptimizerKind::Adam => {
                    let t = self.step as i32;
                    let bc1 = 1.0 - cfg.beta1.powi(t);
                    let bc2 = 1.0 - cfg.beta2.powi(t);
                    let (m, s) = (&mut self.first[i], &mut self.second[i]);
                    for j in 0..values.len() {
                        let g = grads[j] * scale;
                        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                        s[j] = cfg.beta2 * s[j] + (1.0 - cfg.beta2) * g * g;
                        let m_hat = m[j] / bc1;
                        let s_hat = s[j] / bc2;
                        values[j] -= cfg.lr * m_hat / (s_hat.sqrt() + cfg.eps);
                    }
                }
            }
        }
    }
}

/// Single optimizer update over `params` with a fresh state.
pub fn optimizer_step(params: &mut [&mut Parameter], config: &OptimizerConfig) {
    Optimizer::new(config.clone()).step(params);
}
