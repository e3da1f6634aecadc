//! Two-phase cascaded training of a dual-mode encoder/decoder.
//!
//! Phase 1 trains an LSTM encoder and a time-distributed decoder end to end.
//! The network is then frozen and extended by a bottleneck LSTM layer `A`
//! on the encoder side and a dense entry layer `B` on the decoder side.
//! Phase 2 trains only `A` and `B` through the frozen decoder. The phase-1
//! path stays available as the informative mode.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SequenceWindow;
use crate::error::{Error, Result};
use crate::estimators::{gcmi, kde_mi_label, DimensionGuard, KdeConfig, SampleMatrix};
use crate::nn::{
    Activation, Batch, Bottleneck, DenseLayer, LayerActivations, LstmLayer, Optimizer, OptimizerConfig,
    SplitNetwork, Tensor, TimeDistributed,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Transmit `z`, the last phase-1 encoder state.
    Informative,
    /// Transmit `z'`, the bottleneck state.
    Compressed,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Informative, Mode::Compressed];

    pub fn tag(self) -> u8 {
        match self {
            Mode::Informative => 0,
            Mode::Compressed => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Mode> {
        match tag {
            0 => Ok(Mode::Informative),
            1 => Ok(Mode::Compressed),
            t => Err(Error::Contract(format!("unknown mode tag {t}"))),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "informative" => Ok(Mode::Informative),
            "compressed" => Ok(Mode::Compressed),
            other => Err(Error::Contract(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    pub encoder_sizes: Vec<usize>,
    pub bottleneck: usize,
    /// Hidden tanh layers of the shared decoder, before the softmax layer.
    pub decoder_sizes: Vec<usize>,
    pub epochs_phase1: usize,
    /// Defaults to `epochs_phase1`.
    pub epochs_phase2: Option<usize>,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            encoder_sizes: vec![128, 128],
            bottleneck: 32,
            decoder_sizes: vec![64],
            epochs_phase1: 15,
            epochs_phase2: None,
            batch_size: 256,
            optimizer: OptimizerConfig::default(),
            seed: 1,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        let last = *self
            .encoder_sizes
            .last()
            .ok_or_else(|| Error::Config("encoder_sizes must not be empty".into()))?;
        if self.encoder_sizes.contains(&0) || self.bottleneck == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.bottleneck >= last {
            return Err(Error::Config(format!(
                "bottleneck ({}) must be smaller than the last encoder layer ({last})",
                self.bottleneck
            )));
        }
        if self.epochs_phase1 == 0 || self.epochs_phase2 == Some(0) {
            return Err(Error::Config("epochs per phase must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.optimizer.lr)));
        }
        Ok(())
    }

    pub fn phase2_epochs(&self) -> usize {
        self.epochs_phase2.unwrap_or(self.epochs_phase1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub phase1: Vec<EpochStats>,
    pub phase2: Vec<EpochStats>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CascadeModel {
    pub config: CascadeConfig,
    pub network: SplitNetwork,
    pub history: TrainingHistory,
}

/// Receives activation records on a fixed probe batch: once before the first
/// epoch of a phase (epoch 0) and after every epoch.
pub struct Recorder<'a> {
    pub probe: &'a Tensor,
    pub sink: &'a mut dyn FnMut(u8, Vec<LayerActivations>) -> Result<()>,
}

impl Recorder<'_> {
    fn emit(&mut self, network: &SplitNetwork, phase: u8, epoch: usize) -> Result<()> {
        let mut recs = crate::nn::record_activations(network, self.probe, epoch)?;
        if phase == 2 {
            // Layers below the bottleneck are frozen; only its record changes.
            recs.drain(..recs.len() - 1);
        }
        (self.sink)(phase, recs)
    }
}

/// Seeded choice of `size` windows (all of them if fewer), in index order.
pub fn select_probe(windows: &[SequenceWindow], size: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, windows.len(), size.min(windows.len())).into_vec();
    idx.sort_unstable();
    idx
}

fn check_windows(data: &[SequenceWindow]) -> Result<(usize, usize)> {
    let first = data
        .first()
        .ok_or_else(|| Error::InsufficientSamples {
            context: "training windows".into(),
            required: 1,
            got: 0,
        })?;
    Ok((first.timesteps(), first.features()))
}

fn run_epochs(
    network: &mut SplitNetwork,
    data: &[SequenceWindow],
    cfg: &CascadeConfig,
    phase: u8,
    mode: Mode,
    epochs: usize,
    mut recorder: Option<&mut Recorder>,
) -> Result<Vec<EpochStats>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1000 * u64::from(phase)));
    let mut optimizer = Optimizer::new(cfg.optimizer.clone());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(epochs);
    if let Some(r) = recorder.as_deref_mut() {
        r.emit(network, phase, 0)?;
    }
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut total = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Batch::from_windows(chunk.iter().map(|&i| &data[i]))?;
            let pass = network.forward_train(&batch, mode).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Diverged {
                    phase,
                    epoch,
                    loss: f64::NAN,
                },
                e => e,
            })?;
            let loss = SplitNetwork::loss(pass.probs(), &batch.targets);
            if !loss.is_finite() {
                return Err(Error::Diverged { phase, epoch, loss });
            }
            correct += count_correct(pass.probs(), &batch.targets);
            total += batch.targets.len();
            loss_sum += loss * chunk.len() as f64;
            network.zero_grad();
            network.backward(&pass, &batch.targets)?;
            optimizer.step(&mut network.params_mut());
        }
        let loss = loss_sum / data.len() as f64;
        if !loss.is_finite() || !network.all_finite() {
            return Err(Error::Diverged { phase, epoch, loss });
        }
        log::info!("phase {phase} epoch {epoch}: loss {loss:.4}");
        history.push(EpochStats {
            epoch,
            loss,
            train_accuracy: correct as f64 / total as f64,
        });
        if let Some(r) = recorder.as_deref_mut() {
            r.emit(network, phase, epoch)?;
        }
    }
    Ok(history)
}

fn count_correct(probs: &Tensor, targets: &[usize]) -> usize {
    let k = probs.inner_dim();
    targets
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(&probs.values()[i * k..(i + 1) * k]) == y)
        .count()
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Phase 1: trains encoder and decoder end to end.
pub fn train_phase1(data: &[SequenceWindow], classes: usize, cfg: &CascadeConfig, recorder: Option<&mut Recorder>) -> Result<CascadeModel> {
    cfg.validate()?;
    let (t_len, d) = check_windows(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut network = SplitNetwork::new(t_len, d, classes, &cfg.encoder_sizes, &cfg.decoder_sizes, &mut rng)?;
    let phase1 = run_epochs(&mut network, data, cfg, 1, Mode::Informative, cfg.epochs_phase1, recorder)?;
    Ok(CascadeModel {
        config: cfg.clone(),
        network,
        history: TrainingHistory {
            phase1,
            phase2: Vec::new(),
        },
    })
}

/// Freezes the phase-1 network and attaches the bottleneck path.
pub fn augment(mut model: CascadeModel, cfg: &CascadeConfig) -> Result<CascadeModel> {
    cfg.validate()?;
    if model.network.bottleneck.is_some() {
        return Err(Error::Contract("model is already augmented".into()));
    }
    let top = model.network.encoder.last().expect("encoder has layers").cells;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(7));
    let layer_a = LstmLayer::new(top, cfg.bottleneck, &mut rng);
    let layer_b = DenseLayer::new(cfg.bottleneck, top, Activation::Tanh, &mut rng);
    if layer_a.cells != layer_b.inputs() || layer_b.outputs() != top {
        return Err(Error::Config(format!(
            "layer A output ({}) must equal layer B input ({})",
            layer_a.cells,
            layer_b.inputs()
        )));
    }
    for p in model.network.params_mut() {
        p.frozen = true;
    }
    model.network.bottleneck = Some(Bottleneck {
        encoder_layer: layer_a,
        decoder_entry: TimeDistributed::new(layer_b),
    });
    model.config = cfg.clone();
    Ok(model)
}

/// Phase 2: trains only the bottleneck layers through the frozen decoder.
pub fn train_phase2(mut model: CascadeModel, data: &[SequenceWindow], cfg: &CascadeConfig, recorder: Option<&mut Recorder>) -> Result<CascadeModel> {
    if model.network.bottleneck.is_none() {
        return Err(Error::Contract("phase 2 requires an augmented model".into()));
    }
    check_windows(data)?;
    let epochs = cfg.phase2_epochs();
    model.history.phase2 = run_epochs(&mut model.network, data, cfg, 2, Mode::Compressed, epochs, recorder)?;
    Ok(model)
}

/// Full cascade: phase 1, augment, phase 2.
pub fn train_cascade(
    data: &[SequenceWindow],
    classes: usize,
    cfg: &CascadeConfig,
    mut recorder: Option<&mut Recorder>,
) -> Result<(CascadeModel, CascadeModel)> {
    let phase1 = train_phase1(data, classes, cfg, recorder.as_deref_mut())?;
    let augmented = augment(phase1.clone(), cfg)?;
    let phase2 = train_phase2(augmented, data, cfg, recorder)?;
    Ok((phase1, phase2))
}

impl CascadeModel {
    pub fn payload_dim(&self, mode: Mode) -> Result<usize> {
        self.network.code_dim(mode)
    }

    /// Class probabilities `[T, B, K]` for a batch of windows.
    pub fn infer_batch(&self, windows: &[SequenceWindow], mode: Mode) -> Result<Tensor> {
        let batch = Batch::from_windows(windows)?;
        self.network.forward(&batch.inputs, mode)
    }

    /// Latent codes `[B, dim]`.
    pub fn encode_batch(&self, windows: &[SequenceWindow], mode: Mode) -> Result<Tensor> {
        let batch = Batch::from_windows(windows)?;
        self.network.encode(&batch.inputs, mode)
    }

    pub fn accuracy(&self, windows: &[SequenceWindow], mode: Mode) -> Result<f64> {
        let mut correct = 0;
        let mut total = 0;
        for chunk in windows.chunks(256) {
            let batch = Batch::from_windows(chunk)?;
            let probs = self.network.forward(&batch.inputs, mode)?;
            correct += count_correct(&probs, &batch.targets);
            total += batch.targets.len();
        }
        if total == 0 {
            return Err(Error::Contract("accuracy over an empty window set".into()));
        }
        Ok(correct as f64 / total as f64)
    }
}

/// Per-timestep class probabilities `T x K` for one window.
pub fn infer(model: &CascadeModel, window: &SequenceWindow, mode: Mode) -> Result<Vec<Vec<f64>>> {
    let probs = model.infer_batch(std::slice::from_ref(window), mode)?;
    Ok(probs.values().chunks(probs.inner_dim()).map(<[f64]>::to_vec).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrderingConfig {
    pub accuracy_slack: f64,
    pub mi_slack_bits: f64,
    /// Optional required accuracy gap (informative minus compressed).
    pub min_accuracy_gap: Option<f64>,
    /// Pooled `(window, t)` decoder outputs subsampled to at most this many
    /// points for the label MI.
    pub kde_max_points: usize,
    pub kde: KdeConfig,
    pub guard: DimensionGuard,
    pub seed: u64,
}

impl Default for OrderingConfig {
    fn default() -> Self {
        OrderingConfig {
            accuracy_slack: 0.02,
            mi_slack_bits: 0.2,
            min_accuracy_gap: None,
            kde_max_points: 2000,
            kde: KdeConfig::default(),
            guard: DimensionGuard::default(),
            seed: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub accuracy: f64,
    pub i_xz_bits: f64,
    pub i_y_out_bits: f64,
    pub payload_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingChecks {
    pub compressed_accuracy_within_slack: bool,
    pub compressed_i_xz_within_slack: bool,
    pub min_gap_met: bool,
    /// Label information of the compressed output does not exceed the
    /// informative output.
    pub i_y_out_compressed_le_informative: bool,
    /// The reverse direction, reported for comparison.
    pub i_y_out_informative_le_compressed: bool,
    pub projected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub modes: Vec<ModeReport>,
    pub checks: OrderingChecks,
    pub accuracy_slack: f64,
    pub mi_slack_bits: f64,
    pub samples: usize,
    pub pass: bool,
}

fn flatten_inputs(windows: &[SequenceWindow]) -> Result<SampleMatrix> {
    let d = windows[0].inputs.len();
    let v: Vec<f64> = windows.iter().flat_map(|w| w.inputs.iter().copied()).collect();
    SampleMatrix::new(windows.len(), d, v)
}

/// Compares the two modes on held-out windows. A failed ordering is a
/// reported outcome, not an error.
pub fn verify_ordering(model: &CascadeModel, val: &[SequenceWindow], cfg: &OrderingConfig) -> Result<OrderingReport> {
    if model.network.bottleneck.is_none() {
        return Err(Error::Contract("ordering needs both modes; augment and train phase 2 first".into()));
    }
    if val.len() < 3 {
        return Err(Error::InsufficientSamples {
            context: "ordering validation windows".into(),
            required: 3,
            got: val.len(),
        });
    }
    let x = flatten_inputs(val)?;
    let (xp, mut projected) = cfg.guard.apply(&x, 2)?;
    let mut modes = Vec::new();
    for mode in Mode::ALL {
        let codes = model.encode_batch(val, mode)?;
        let z = SampleMatrix::new(val.len(), codes.inner_dim(), codes.into_values())?;
        let (zp, pz) = cfg.guard.apply(&z, 2)?;
        projected |= pz;
        let i_xz = gcmi(&xp, &zp)?.bits;

        let batch = Batch::from_windows(val)?;
        let probs = model.network.forward(&batch.inputs, mode)?;
        let k = probs.inner_dim();
        let n_points = batch.targets.len();
        let keep = {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx =
                rand::seq::index::sample(&mut rng, n_points, cfg.kde_max_points.min(n_points)).into_vec();
            idx.sort_unstable();
            idx
        };
        let out: Vec<f64> = keep
            .iter()
            .flat_map(|&i| probs.values()[i * k..(i + 1) * k].iter().copied())
            .collect();
        let labels: Vec<usize> = keep.iter().map(|&i| batch.targets[i]).collect();
        let i_y = kde_mi_label(&labels, &SampleMatrix::new(keep.len(), k, out)?, &cfg.kde)?.bits;

        modes.push(ModeReport {
            mode,
            accuracy: model.accuracy(val, mode)?,
            i_xz_bits: i_xz,
            i_y_out_bits: i_y,
            payload_dim: model.payload_dim(mode)?,
        });
    }
    let (inf, comp) = (&modes[0], &modes[1]);
    let checks = OrderingChecks {
        compressed_accuracy_within_slack: comp.accuracy <= inf.accuracy + cfg.accuracy_slack,
        compressed_i_xz_within_slack: comp.i_xz_bits <= inf.i_xz_bits + cfg.mi_slack_bits,
        min_gap_met: cfg.min_accuracy_gap.is_none_or(|g| inf.accuracy - comp.accuracy >= g),
        i_y_out_compressed_le_informative: comp.i_y_out_bits <= inf.i_y_out_bits,
        i_y_out_informative_le_compressed: inf.i_y_out_bits <= comp.i_y_out_bits,
        projected,
    };
    let pass = checks.compressed_accuracy_within_slack && checks.compressed_i_xz_within_slack && checks.min_gap_met;
    Ok(OrderingReport {
        modes,
        checks,
        accuracy_slack: cfg.accuracy_slack,
        mi_slack_bits: cfg.mi_slack_bits,
        samples: val.len(),
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn tiny_cfg() -> CascadeConfig {
        CascadeConfig {
            encoder_sizes: vec![8, 8],
            bottleneck: 3,
            decoder_sizes: vec![8],
            epochs_phase1: 2,
            batch_size: 16,
            ..Default::default()
        }
    }

    fn tiny_data() -> Vec<SequenceWindow> {
        synth_generate(&SynthConfig {
            n_windows: 64,
            timesteps: 6,
            features: 4,
            classes: 3,
            ..Default::default()
        })
        .unwrap()
        .windows
    }

    #[test]
    fn config_invariants() {
        assert!(CascadeConfig::default().validate().is_ok());
        let bad = CascadeConfig {
            bottleneck: 128,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let zero = CascadeConfig {
            epochs_phase1: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn default_payload_dims() {
        let data = tiny_data();
        let cfg = CascadeConfig {
            epochs_phase1: 1,
            ..tiny_cfg()
        };
        let m = augment(train_phase1(&data, 3, &cfg, None).unwrap(), &cfg).unwrap();
        assert_eq!(m.payload_dim(Mode::Informative).unwrap(), 8);
        assert_eq!(m.payload_dim(Mode::Compressed).unwrap(), 3);
        assert_eq!(m.network.encoder.len() + 1, 3);
    }

    #[test]
    fn phase2_leaves_phase1_untouched() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let (p1, p2) = train_cascade(&data, 3, &cfg, None).unwrap();
        let before: Vec<u64> = p1.network.params().iter().flat_map(|p| p.values().iter().map(|v| v.to_bits())).collect();
        let mut after: Vec<&crate::nn::Parameter> = Vec::new();
        after.extend(p2.network.encoder.iter().flat_map(|l| l.params()));
        after.extend(p2.network.decoder.iter().flat_map(|l| l.layer.params()));
        let after: Vec<u64> = after.iter().flat_map(|p| p.values().iter().map(|v| v.to_bits())).collect();
        assert_eq!(before, after);
        let w = &data[0];
        assert_eq!(
            infer(&p1, w, Mode::Informative).unwrap(),
            infer(&p2, w, Mode::Informative).unwrap()
        );
        let trainable = p2.network.params().iter().filter(|p| !p.frozen).count();
        assert_eq!(trainable, 5);
    }

    #[test]
    fn same_seed_same_history() {
        let data = tiny_data();
        let a = train_phase1(&data, 3, &tiny_cfg(), None).unwrap();
        let b = train_phase1(&data, 3, &tiny_cfg(), None).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn outputs_are_distributions_and_batch_free() {
        let data = tiny_data();
        let (_, m) = train_cascade(&data, 3, &tiny_cfg(), None).unwrap();
        let batch = m.infer_batch(&data[..5], Mode::Compressed).unwrap();
        for (b, w) in data[..5].iter().enumerate() {
            let single = infer(&m, w, Mode::Compressed).unwrap();
            for (t, row) in single.iter().enumerate() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let off = (t * 5 + b) * 3;
                assert_eq!(row.as_slice(), &batch.values()[off..off + 3]);
            }
        }
    }

    #[test]
    fn recorder_sees_every_epoch() {
        let data = tiny_data();
        let probe = crate::nn::time_major(&data[..10]).unwrap();
        let mut seen = Vec::new();
        let mut sink = |phase: u8, recs: Vec<LayerActivations>| {
            seen.push((phase, recs.iter().map(|r| (r.layer, r.epoch)).collect::<Vec<_>>()));
            Ok(())
        };
        let mut rec = Recorder {
            probe: &probe,
            sink: &mut sink,
        };
        train_cascade(&data, 3, &tiny_cfg(), Some(&mut rec)).unwrap();
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], (1, vec![(1, 0), (2, 0)]));
        assert_eq!(seen[5], (2, vec![(3, 2)]));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("Compressed".parse::<Mode>().unwrap(), Mode::Compressed);
        assert!("both".parse::<Mode>().is_err());
        assert_eq!(Mode::from_tag(Mode::Informative.tag()).unwrap(), Mode::Informative);
    }
}
