//! Information-plane analysis over recorded activations: per-layer
//! `(I(X;H), I(H;Y))` trajectories, per-timestep label information,
//! prefix compression surfaces and conditional-MI redundancy of earlier
//! hidden states.

mod export;
mod records;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{conditional_gcmi, gcmi, kde_mi_label, project_top_components, DimensionGuard, KdeConfig, SampleMatrix};
use crate::nn::LayerActivations;

pub use export::{emit_plot_script, export_curves, read_curves, CurvePoint, ExportFormat, CSV_HEADER};
pub use records::{read_activations, read_probe, write_activations, write_probe, ProbeData, RecordKey, RecordStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoPlanePoint {
    pub phase: u8,
    pub epoch: usize,
    pub layer: usize,
    pub i_xh_bits: f64,
    pub i_yh_bits: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemporalKind {
    /// `I(H_t; y_tau)` per timestep.
    #[serde(rename = "i_ht_y")]
    IHtY,
    /// `I(X_1..X_t; H_1..H_t)` per timestep.
    #[serde(rename = "i_x_h_prefix")]
    IXHPrefix,
}

impl TemporalKind {
    pub fn name(self) -> &'static str {
        match self {
            TemporalKind::IHtY => "i_ht_y",
            TemporalKind::IXHPrefix => "i_x_h_prefix",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "i_ht_y" => Some(TemporalKind::IHtY),
            "i_x_h_prefix" => Some(TemporalKind::IXHPrefix),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalCurvePoint {
    pub kind: TemporalKind,
    pub epoch: usize,
    pub layer: Option<usize>,
    pub t: usize,
    pub value_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedundancyReport {
    pub layer: usize,
    pub epoch: usize,
    /// `I(X; H_T | H_{T-1}, ..., H_{T-k})` for `k = 1..=k_max`.
    pub values_bits: Vec<f64>,
    pub k_star: usize,
    pub threshold_bits: f64,
    pub k_max: usize,
    pub projected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// 1-based label timestep used for `I(H; y_tau)`.
    pub tau: usize,
    pub threshold_bits: f64,
    pub k_max: usize,
    /// Epoch compared against the final one in the compression summary.
    pub early_epoch: usize,
    pub guard: DimensionGuard,
    pub kde: KdeConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            tau: 5,
            threshold_bits: 3.0,
            k_max: 6,
            early_epoch: 1,
            guard: DimensionGuard::default(),
            kde: KdeConfig::default(),
        }
    }
}

const MIN_SAMPLES: usize = 40;

fn check_samples(n: usize) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            context: "information-plane probe batch".into(),
            required: MIN_SAMPLES,
            got: n,
        });
    }
    Ok(())
}

fn matrix(n: usize, values: Vec<f64>) -> Result<SampleMatrix> {
    let d = values.len() / n;
    SampleMatrix::new(n, d, values)
}

/// Projects `m` when it exceeds the per-variable cap.
struct Guarded<'a> {
    guard: &'a DimensionGuard,
    vars: usize,
    projected: bool,
}

impl Guarded<'_> {
    fn apply(&mut self, m: &SampleMatrix) -> Result<SampleMatrix> {
        let (out, p) = self.guard.apply(m, self.vars)?;
        self.projected |= p;
        Ok(out)
    }
}

/// States of `rec` at timesteps `T-k..=T`, concatenated per sample.
fn last_states(rec: &LayerActivations, k: usize) -> Vec<f64> {
    let t_len = rec.timesteps;
    let ts: Vec<usize> = (t_len.saturating_sub(k).max(1)..=t_len).collect();
    rec.concat_timesteps(&ts)
}

fn x_flat(probe: &ProbeData) -> Result<SampleMatrix> {
    matrix(probe.samples, probe.inputs.clone())
}

/// `I(X; H_T | H_{T-1}, ..., H_{T-k})` for `k = 1..=k_max`; `k*` is the
/// first `k` whose value falls below the threshold, else `k_max`.
pub fn redundancy_truncation(
    rec: &LayerActivations,
    probe: &ProbeData,
    threshold_bits: f64,
    k_max: usize,
    guard: &DimensionGuard,
) -> Result<RedundancyReport> {
    check_samples(rec.samples)?;
    let k_max = k_max.min(rec.timesteps - 1).max(1);
    // Every block gets the same width, sized for the largest conditioning
    // set, so the conditioning sets are nested across k.
    let n = rec.samples;
    let width = guard.cap(n, k_max + 2);
    let mut projected = false;
    let mut block = |m: SampleMatrix| -> Result<SampleMatrix> {
        if m.n_dims() <= width {
            return Ok(m);
        }
        projected = true;
        project_top_components(&m, width, guard.seed)
    };
    let x = block(x_flat(probe)?)?;
    let h_t = block(matrix(n, rec.at_timestep(rec.timesteps))?)?;
    let past: Vec<SampleMatrix> = (1..=k_max)
        .map(|k| block(matrix(n, rec.at_timestep(rec.timesteps - k))?))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let parts: Vec<&SampleMatrix> = past[..k].iter().collect();
        let cond = SampleMatrix::hstack(&parts)?;
        values.push(conditional_gcmi(&x, &h_t, &cond)?.bits);
    }
    let k_star = values
        .iter()
        .position(|&v| v < threshold_bits)
        .map_or(k_max, |i| i + 1);
    Ok(RedundancyReport {
        layer: rec.layer,
        epoch: rec.epoch,
        values_bits: values,
        k_star,
        threshold_bits,
        k_max,
        projected,
    })
}

/// One plane point: `I(X;H)` by GCMI and `I(H;y_tau)` by KDE, each on a
/// representation within the dimension cap of its estimate.
fn plane_point(repr: &SampleMatrix, x: &SampleMatrix, y: &[usize], cfg: &AnalysisConfig) -> Result<(f64, f64, bool)> {
    let mut g = Guarded {
        guard: &cfg.guard,
        vars: 2,
        projected: false,
    };
    let hp = g.apply(repr)?;
    let i_xh = gcmi(x, &hp)?.bits;
    g.vars = 1;
    let hk = g.apply(repr)?;
    let i_yh = kde_mi_label(y, &hk, &cfg.kde)?.bits;
    Ok((i_xh, i_yh, g.projected))
}

/// Representation of a layer for the plane: the first layer keeps its last
/// `k_star + 1` states, deeper layers their final state.
pub fn layer_representation(rec: &LayerActivations, k_star: usize) -> Result<SampleMatrix> {
    let values = if rec.layer == 1 {
        last_states(rec, k_star)
    } else {
        rec.at_timestep(rec.timesteps)
    };
    matrix(rec.samples, values)
}

/// Plane points for every recorded `(phase, epoch, layer)`, in key order.
pub fn compute_plane(store: &RecordStore, probe: &ProbeData, k_star: usize, cfg: &AnalysisConfig) -> Result<(Vec<InfoPlanePoint>, bool)> {
    check_samples(probe.samples)?;
    let mut g = Guarded {
        guard: &cfg.guard,
        vars: 2,
        projected: false,
    };
    let x = g.apply(&x_flat(probe)?)?;
    let y = probe.labels_at(cfg.tau);
    let mut points = Vec::new();
    for key in store.keys() {
        let rec = store.load(*key)?;
        let repr = layer_representation(&rec, k_star)?;
        let (i_xh, i_yh, p) = plane_point(&repr, &x, &y, cfg)?;
        g.projected |= p;
        points.push(InfoPlanePoint {
            phase: key.phase,
            epoch: key.epoch,
            layer: key.layer,
            i_xh_bits: i_xh,
            i_yh_bits: i_yh,
        });
    }
    Ok((points, g.projected))
}

/// `I(H_t; y_tau)` for every phase-1 epoch of `layer` and every `t`.
pub fn temporal_info_curve(
    store: &RecordStore,
    probe: &ProbeData,
    layer: usize,
    cfg: &AnalysisConfig,
) -> Result<(Vec<TemporalCurvePoint>, bool)> {
    check_samples(probe.samples)?;
    if cfg.tau == 0 || cfg.tau > probe.timesteps {
        return Err(Error::Config(format!("tau must be in 1..={}, got {}", probe.timesteps, cfg.tau)));
    }
    let y = probe.labels_at(cfg.tau);
    let mut g = Guarded {
        guard: &cfg.guard,
        vars: 1,
        projected: false,
    };
    let mut out = Vec::new();
    for epoch in store.epochs(1, layer) {
        let rec = store.load(RecordKey { phase: 1, epoch, layer })?;
        for t in 1..=rec.timesteps {
            let h = g.apply(&matrix(rec.samples, rec.at_timestep(t))?)?;
            out.push(TemporalCurvePoint {
                kind: TemporalKind::IHtY,
                epoch,
                layer: Some(layer),
                t,
                value_bits: kde_mi_label(&y, &h, &cfg.kde)?.bits,
            });
        }
    }
    Ok((out, g.projected))
}

/// `I(X_1..X_t; H_1..H_t)` for every phase-1 epoch of `layer` and every `t`.
pub fn temporal_compression_curve(
    store: &RecordStore,
    probe: &ProbeData,
    layer: usize,
    cfg: &AnalysisConfig,
) -> Result<(Vec<TemporalCurvePoint>, bool)> {
    check_samples(probe.samples)?;
    let mut g = Guarded {
        guard: &cfg.guard,
        vars: 2,
        projected: false,
    };
    let n = probe.samples;
    let xs: Vec<SampleMatrix> = (1..=probe.timesteps)
        .map(|t| g.apply(&matrix(n, probe.input_prefix(t))?))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for epoch in store.epochs(1, layer) {
        let rec = store.load(RecordKey { phase: 1, epoch, layer })?;
        for t in 1..=rec.timesteps {
            let ts: Vec<usize> = (1..=t).collect();
            let h = g.apply(&matrix(n, rec.concat_timesteps(&ts))?)?;
            out.push(TemporalCurvePoint {
                kind: TemporalKind::IXHPrefix,
                epoch,
                layer: Some(layer),
                t,
                value_bits: gcmi(&xs[t - 1], &h)?.bits,
            });
        }
    }
    Ok((out, g.projected))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = crate::estimators::average_ranks(a);
    let rb = crate::estimators::average_ranks(b);
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

fn curve_at(points: &[TemporalCurvePoint], epoch: usize) -> Vec<f64> {
    let mut v: Vec<(usize, f64)> = points.iter().filter(|p| p.epoch == epoch).map(|p| (p.t, p.value_bits)).collect();
    v.sort_by_key(|p| p.0);
    v.into_iter().map(|p| p.1).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub final_epoch: usize,
    pub early_epoch: usize,
    /// Spearman correlation of `I(H_t^(1); y_tau)` with `t` at the final epoch.
    pub temporal_info_spearman: f64,
    pub temporal_info_last_is_max_within_0_1: bool,
    /// Mean over `t` of early minus final prefix information.
    pub compression_mean_diff_bits: f64,
    pub compression_sign: i8,
    /// Largest increase between consecutive redundancy values for `k <= 4`.
    pub redundancy_max_increase_bits: f64,
    /// Change of the first layer's final `I(X;H)` when truncating to the last
    /// `k* + 1` states instead of all states.
    pub truncation_shift_bits: f64,
    pub fitting_phase_holds: bool,
    pub projection_applied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub config: AnalysisConfig,
    pub plane: Vec<InfoPlanePoint>,
    pub info_curve: Vec<TemporalCurvePoint>,
    pub compression_curve: Vec<TemporalCurvePoint>,
    pub redundancy: RedundancyReport,
    pub summary: AnalysisSummary,
}

/// Runs every analysis over a record directory.
pub fn analyze(store: &RecordStore, cfg: &AnalysisConfig) -> Result<Analysis> {
    let probe = store.probe()?;
    let epochs = store.epochs(1, 1);
    let final_epoch = *epochs
        .last()
        .ok_or_else(|| Error::Config("no phase-1 records of layer 1".into()))?;
    let final_rec = store.load(RecordKey {
        phase: 1,
        epoch: final_epoch,
        layer: 1,
    })?;
    let redundancy = redundancy_truncation(&final_rec, &probe, cfg.threshold_bits, cfg.k_max, &cfg.guard)?;
    let (plane, p1) = compute_plane(store, &probe, redundancy.k_star, cfg)?;
    let (info_curve, p3) = temporal_info_curve(store, &probe, 1, cfg)?;
    let (compression_curve, p2) = temporal_compression_curve(store, &probe, 1, cfg)?;

    let fin = curve_at(&info_curve, final_epoch);
    let ts: Vec<f64> = (1..=fin.len()).map(|t| t as f64).collect();
    let last = *fin.last().unwrap_or(&0.0);
    let early_epoch = if epochs.contains(&cfg.early_epoch) {
        cfg.early_epoch
    } else {
        epochs[0]
    };
    let early = curve_at(&compression_curve, early_epoch);
    let late = curve_at(&compression_curve, final_epoch);
    let diff = early.iter().zip(&late).map(|(e, l)| e - l).sum::<f64>() / early.len().max(1) as f64;
    let upto = redundancy.values_bits.len().min(4);
    let max_increase = redundancy.values_bits[..upto]
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);

    let x = {
        let mut g = Guarded {
            guard: &cfg.guard,
            vars: 2,
            projected: false,
        };
        g.apply(&x_flat(&probe)?)?
    };
    let y = probe.labels_at(cfg.tau);
    let full = matrix(final_rec.samples, final_rec.values.clone())?;
    let truncated = layer_representation(&final_rec, redundancy.k_star)?;
    let shift = (plane_point(&full, &x, &y, cfg)?.0 - plane_point(&truncated, &x, &y, cfg)?.0).abs();

    let fitting = plane
        .iter()
        .filter(|p| p.phase == 1 && p.epoch == final_epoch)
        .all(|fin| {
            plane
                .iter()
                .find(|p| p.phase == 1 && p.epoch == 0 && p.layer == fin.layer)
                .is_none_or(|start| fin.i_yh_bits >= start.i_yh_bits - 0.05)
        });

    let summary = AnalysisSummary {
        final_epoch,
        early_epoch,
        temporal_info_spearman: spearman(&ts, &fin),
        temporal_info_last_is_max_within_0_1: fin.iter().all(|&v| last >= v - 0.1),
        compression_mean_diff_bits: diff,
        compression_sign: if diff > 0.0 {
            1
        } else if diff < 0.0 {
            -1
        } else {
            0
        },
        redundancy_max_increase_bits: if upto < 2 { 0.0 } else { max_increase },
        truncation_shift_bits: shift,
        fitting_phase_holds: fitting,
        projection_applied: p1 || p2 || p3 || redundancy.projected,
    };
    Ok(Analysis {
        config: cfg.clone(),
        plane,
        info_curve,
        compression_curve,
        redundancy,
        summary,
    })
}

/// Writes `plane.csv`, `temporal_info.csv`, `temporal_compression.csv`,
/// `redundancy.json`, `summary.json` and `plot_curves.py` into `dir`.
pub fn write_analysis(dir: &Path, analysis: &Analysis) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let plane: Vec<CurvePoint> = analysis.plane.iter().cloned().map(Into::into).collect();
    let info: Vec<CurvePoint> = analysis.info_curve.iter().cloned().map(Into::into).collect();
    let comp: Vec<CurvePoint> = analysis.compression_curve.iter().cloned().map(Into::into).collect();
    export_curves(&plane, &dir.join("plane.csv"), ExportFormat::Csv)?;
    export_curves(&info, &dir.join("temporal_info.csv"), ExportFormat::Csv)?;
    export_curves(&comp, &dir.join("temporal_compression.csv"), ExportFormat::Csv)?;
    write_json(&dir.join("redundancy.json"), &analysis.redundancy)?;
    write_json(&dir.join("summary.json"), &analysis.summary)?;
    emit_plot_script(&dir.join("plot_curves.py"), "plane.csv", "temporal_info.csv", "temporal_compression.csv")
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::serde(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn probe(n: usize, t: usize, d: usize, seed: u64) -> ProbeData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProbeData {
            samples: n,
            timesteps: t,
            features: d,
            inputs: (0..n * t * d).map(|_| StandardNormal.sample(&mut rng)).collect(),
            targets: (0..n * t).map(|i| (i / t) % 3).collect(),
        }
    }

    fn noise_record(n: usize, t: usize, u: usize, seed: u64) -> LayerActivations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LayerActivations {
            layer: 1,
            epoch: 0,
            samples: n,
            timesteps: t,
            units: u,
            values: (0..n * t * u).map(|_| StandardNormal.sample(&mut rng)).collect(),
        }
    }

    #[test]
    fn constant_layer_is_origin() {
        let p = probe(60, 4, 2, 1);
        let rec = LayerActivations {
            layer: 2,
            epoch: 0,
            samples: 60,
            timesteps: 4,
            units: 3,
            values: vec![0.5; 60 * 4 * 3],
        };
        let x = x_flat(&p).unwrap();
        let repr = layer_representation(&rec, 1).unwrap();
        let (ixh, iyh, _) = plane_point(&repr, &x, &p.labels_at(1), &AnalysisConfig::default()).unwrap();
        assert_eq!((ixh, iyh), (0.0, 0.0));
    }

    #[test]
    fn independent_states_have_no_redundancy() {
        let p = probe(2000, 6, 2, 2);
        let rec = noise_record(2000, 6, 2, 3);
        let r = redundancy_truncation(&rec, &p, 3.0, 4, &DimensionGuard::default()).unwrap();
        assert!(r.values_bits.iter().all(|v| v.abs() < 0.05), "{:?}", r.values_bits);
        assert_eq!(r.k_star, 1);
    }

    #[test]
    fn threshold_above_first_value_selects_one() {
        let p = probe(200, 5, 2, 4);
        let mut rec = noise_record(200, 5, 2, 5);
        // Make H_T a copy of the last input so the first value is large.
        for i in 0..200 {
            let x = &p.inputs[i * 10 + 8..i * 10 + 10];
            rec.values[(i * 5 + 4) * 2..(i * 5 + 5) * 2].copy_from_slice(x);
        }
        let r = redundancy_truncation(&rec, &p, 100.0, 3, &DimensionGuard::default()).unwrap();
        assert_eq!(r.k_star, 1);
        let strict = redundancy_truncation(&rec, &p, -1.0, 3, &DimensionGuard::default()).unwrap();
        assert_eq!(strict.k_star, 3);
    }

    #[test]
    fn too_few_samples_names_requirement() {
        let p = probe(10, 3, 2, 6);
        let rec = noise_record(10, 3, 2, 7);
        match redundancy_truncation(&rec, &p, 3.0, 2, &DimensionGuard::default()) {
            Err(Error::InsufficientSamples { required, .. }) => assert_eq!(required, MIN_SAMPLES),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
    }

    #[test]
    fn last_states_window() {
        let rec = noise_record(2, 5, 1, 8);
        let v = last_states(&rec, 2);
        assert_eq!(v.len(), 6);
        assert_eq!(v[0], rec.state(0, 3)[0]);
        assert_eq!(v[5], rec.state(1, 5)[0]);
    }
}
