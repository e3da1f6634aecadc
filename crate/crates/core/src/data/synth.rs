use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::csv_load::{SchemaSpec, TargetKind, WindowConfig};
use super::quantize::{fit_quantile_thresholds, quantize_with};
use super::SequenceWindow;
use crate::error::{Error, Result};
use crate::estimators::plugin_discrete_mi;

/// Synthetic sequence generator settings.
///
/// A latent AR(1) state `s_t = a s_{t-1} + sqrt(1 - a^2) e_t` drives the
/// observed features through a fixed random linear map plus Gaussian noise.
/// Output step `t` of a window is labelled with the quantile bin of the mean
/// of the first latent component over the `label_window` steps ending at
/// input time `t + lead`. With `lead = timesteps` the targets are the next
/// `T` steps after the window; `lead = 0` labels the observed steps.
/// Consecutive windows are `T + lead` steps apart, so no window's inputs
/// coincide in time with another window's targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_windows: usize,
    pub timesteps: usize,
    pub features: usize,
    pub latent_dim: usize,
    pub persistence: f64,
    pub noise: f64,
    pub label_window: usize,
    pub lead: usize,
    pub classes: usize,
    /// Permute label sequences across windows, destroying any input/label
    /// dependence.
    pub shuffle_labels: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_windows: 5000,
            timesteps: 20,
            features: 11,
            latent_dim: 3,
            persistence: 0.95,
            noise: 0.8,
            label_window: 5,
            lead: 20,
            classes: 8,
            shuffle_labels: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!("noise level must be >= 0, got {}", self.noise)));
        }
        if !(0.0..1.0).contains(&self.persistence) {
            return Err(Error::Config(format!("persistence must be in [0, 1), got {}", self.persistence)));
        }
        if self.n_windows == 0 || self.timesteps == 0 || self.features == 0 || self.latent_dim == 0 {
            return Err(Error::Config("synthetic dimensions must be positive".into()));
        }
        if self.label_window == 0 || self.classes < 2 {
            return Err(Error::Config("label window must be >= 1 and classes >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub config: SynthConfig,
    /// Consecutive, non-overlapping windows of one long series (run `"0"`).
    pub windows: Vec<SequenceWindow>,
    /// First latent component at the label time of each `(window, t)`,
    /// window-major.
    pub latent_driver: Vec<f64>,
    /// Label score (windowed latent mean) per `(window, t)`.
    pub scores: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Plug-in MI between the quantized latent driver and the label.
    pub oracle_mi_bits: f64,
    /// Observation map, `features x latent_dim`.
    pub mixing: Vec<f64>,
}

/// Bins used to discretize the latent driver for the oracle MI.
const ORACLE_BINS: usize = 16;

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (t_len, d, k) = (cfg.timesteps, cfg.features, cfg.latent_dim);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let scale = 1.0 / (k as f64).sqrt();
    let mixing: Vec<f64> = (0..d * k).map(|_| normal() * scale).collect();

    let burn = cfg.label_window - 1;
    let stride = t_len + cfg.lead;
    let total = burn + cfg.n_windows * stride;
    let innov = (1.0 - cfg.persistence * cfg.persistence).sqrt();
    let mut state: Vec<f64> = (0..k).map(|_| normal()).collect();
    let mut driver = Vec::with_capacity(total);
    let mut observed = Vec::with_capacity(cfg.n_windows * t_len * d);
    for i in 0..total {
        for s in state.iter_mut() {
            *s = cfg.persistence * *s + innov * normal();
        }
        driver.push(state[0]);
        let visible = i >= burn && (i - burn) % stride < t_len;
        if visible {
            for f in 0..d {
                let clean: f64 = (0..k).map(|j| mixing[f * k + j] * state[j]).sum();
                observed.push(clean + cfg.noise * normal());
            }
        }
    }

    let mut latent_driver = Vec::with_capacity(cfg.n_windows * t_len);
    let mut scores = Vec::with_capacity(cfg.n_windows * t_len);
    for w in 0..cfg.n_windows {
        for t in 0..t_len {
            let end = burn + w * stride + cfg.lead + t;
            let span = &driver[end - burn..=end];
            latent_driver.push(driver[end]);
            scores.push(span.iter().sum::<f64>() / span.len() as f64);
        }
    }
    let thresholds = fit_quantile_thresholds(&scores, cfg.classes)?;
    let labels = quantize_with(&scores, &thresholds);

    let mut label_rows: Vec<Vec<usize>> = labels.chunks(t_len).map(<[usize]>::to_vec).collect();
    if cfg.shuffle_labels {
        label_rows.shuffle(&mut rng);
    }

    let windows: Vec<SequenceWindow> = (0..cfg.n_windows)
        .map(|w| SequenceWindow {
            inputs: observed[w * t_len * d..(w + 1) * t_len * d].to_vec(),
            targets: label_rows[w].clone(),
            timesteps: t_len,
            features: d,
            run: "0".into(),
            start_row: w * t_len,
        })
        .collect();

    let driver_bins = quantize_with(&latent_driver, &fit_quantile_thresholds(&latent_driver, ORACLE_BINS)?);
    let flat_labels: Vec<usize> = label_rows.iter().flatten().copied().collect();
    let oracle = plugin_discrete_mi(&driver_bins, &flat_labels);

    Ok(SynthDataset {
        config: cfg.clone(),
        windows,
        latent_driver,
        scores,
        thresholds,
        oracle_mi_bits: oracle.bits,
        mixing,
    })
}

/// JSON sidecar written next to a generated CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSidecar {
    pub config: SynthConfig,
    pub oracle_mi_bits: f64,
    pub oracle_bins: usize,
    pub rows: usize,
    pub schema: SchemaSpec,
    pub window: WindowConfig,
}

impl SynthDataset {
    pub fn schema_spec(&self) -> SchemaSpec {
        SchemaSpec {
            feature_columns: (0..self.config.features).map(|i| format!("x{i}")).collect(),
            target_column: "label".into(),
            run_column: Some("run".into()),
            target: TargetKind::Class {
                classes: self.config.classes,
            },
        }
    }

    /// Windows are stored back to back, so re-windowing uses stride `T`.
    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            timesteps: self.config.timesteps,
            stride: self.config.timesteps,
        }
    }

    pub fn sidecar(&self) -> SynthSidecar {
        SynthSidecar {
            config: self.config.clone(),
            oracle_mi_bits: self.oracle_mi_bits,
            oracle_bins: ORACLE_BINS,
            rows: self.windows.len() * self.config.timesteps,
            schema: self.schema_spec(),
            window: self.window_config(),
        }
    }
}

/// Sidecar path for a dataset CSV: same stem, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes `run,x0..x{D-1},label` rows plus the JSON sidecar.
pub fn write_synth(csv_path: &Path, data: &SynthDataset) -> Result<PathBuf> {
    let d = data.config.features;
    let mut out = String::with_capacity(data.windows.len() * data.config.timesteps * d * 20);
    out.push_str("run");
    for i in 0..d {
        let _ = write!(out, ",x{i}");
    }
    out.push_str(",label\n");
    for w in &data.windows {
        for t in 0..w.timesteps {
            out.push_str(&w.run);
            for v in w.step(t) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", w.targets[t]);
        }
    }
    if let Some(dir) = csv_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(csv_path, out).map_err(|e| Error::io(csv_path, e))?;
    let side = sidecar_path(csv_path);
    let json = serde_json::to_string_pretty(&data.sidecar()).map_err(|e| Error::serde(&side, e))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            n_windows: 200,
            noise,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_latent_readout_is_perfect() {
        let cfg = SynthConfig {
            lead: 0,
            ..small(0.0)
        };
        let ds = synth_generate(&cfg).unwrap();
        let (d, k, t_len, w_len) = (cfg.features, cfg.latent_dim, cfg.timesteps, cfg.label_window);
        // Least-squares readout of the latent state from the observations;
        // with no lead the windows tile one contiguous series.
        let m = DMatrix::from_row_slice(d, k, &ds.mixing);
        let pinv = m.clone().pseudo_inverse(1e-12).unwrap();
        let driver: Vec<f64> = ds
            .windows
            .iter()
            .flat_map(|w| (0..t_len).map(|t| (pinv.row(0) * DMatrix::from_row_slice(d, 1, w.step(t)))[(0, 0)]))
            .collect();
        let targets: Vec<usize> = ds.windows.iter().flat_map(|w| w.targets.iter().copied()).collect();
        let mut correct = 0;
        let mut boundary = 0;
        for i in w_len - 1..driver.len() {
            let s = driver[i + 1 - w_len..=i].iter().sum::<f64>() / w_len as f64;
            // Thresholds are sample values; the readout may land a rounding
            // error away on the other side of one.
            if ds.thresholds.iter().any(|th| (s - th).abs() < 1e-9) {
                boundary += 1;
                continue;
            }
            correct += usize::from(quantize_with(&[s], &ds.thresholds)[0] == targets[i]);
        }
        assert!(boundary < cfg.classes);
        assert_eq!(correct + boundary, driver.len() + 1 - w_len);
    }

    #[test]
    fn lead_labels_follow_the_window() {
        let cfg = small(0.0);
        let ds = synth_generate(&cfg).unwrap();
        assert_eq!(ds.latent_driver.len(), 200 * cfg.timesteps);
        // Label scores are windowed means of the driver at the label times.
        let w_len = cfg.label_window;
        for (i, s) in ds.scores.iter().enumerate() {
            if i % cfg.timesteps + 1 >= w_len {
                let mean = ds.latent_driver[i + 1 - w_len..=i].iter().sum::<f64>() / w_len as f64;
                assert!((mean - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_oracle_mi_at_least_one_bit() {
        let ds = synth_generate(&SynthConfig::default()).unwrap();
        assert!(ds.oracle_mi_bits >= 1.0, "{}", ds.oracle_mi_bits);
    }

    #[test]
    fn shuffled_labels_have_no_oracle_information() {
        let cfg = SynthConfig {
            shuffle_labels: true,
            ..small(0.8)
        };
        let ds = synth_generate(&cfg).unwrap();
        let plain = synth_generate(&small(0.8)).unwrap();
        // Plug-in bias at 4000 samples over 16 x 8 cells stays well below this.
        assert!(ds.oracle_mi_bits < 0.1, "{}", ds.oracle_mi_bits);
        assert!(plain.oracle_mi_bits > 1.0);
    }

    #[test]
    fn windows_are_disjoint_and_shaped() {
        let ds = synth_generate(&small(0.5)).unwrap();
        assert_eq!(ds.windows.len(), 200);
        for pair in ds.windows.windows(2) {
            assert!(!pair[0].overlaps(&pair[1]));
            assert_eq!(pair[0].inputs.len(), 20 * 11);
            assert!(pair[0].targets.iter().all(|&y| y < 8));
        }
    }

    #[test]
    fn negative_noise_rejected() {
        assert!(synth_generate(&small(-0.1)).is_err());
    }

    #[test]
    fn same_config_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_synth(&a, &synth_generate(&small(0.5)).unwrap()).unwrap();
        write_synth(&b, &synth_generate(&small(0.5)).unwrap()).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(
            fs::read(sidecar_path(&a)).unwrap(),
            fs::read(sidecar_path(&b)).unwrap()
        );
    }
}
