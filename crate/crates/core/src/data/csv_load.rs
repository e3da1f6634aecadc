use std::path::Path;

use serde::{Deserialize, Serialize};

use super::quantize::{fit_quantile_thresholds, quantize_with};
use super::split::{split, SplitConfig};
use super::SequenceWindow;
use crate::error::{Error, Result};

/// How the target column becomes per-timestep classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetKind {
    /// Already an integer class in `0..classes`.
    Class { classes: usize },
    /// Continuous throughput binned into `classes` training-split quantiles.
    Throughput { classes: usize },
}

impl TargetKind {
    pub fn classes(&self) -> usize {
        match self {
            TargetKind::Class { classes } | TargetKind::Throughput { classes } => *classes,
        }
    }
}

/// User-facing column description, before statistics are fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaSpec {
    pub feature_columns: Vec<String>,
    pub target_column: String,
    /// Rows sharing a run id form one time-ordered series. Without a run
    /// column the whole file is one run.
    pub run_column: Option<String>,
    pub target: TargetKind,
}

impl SchemaSpec {
    /// Layout of Lumos5G-style throughput logs.
    pub fn lumos5g(feature_columns: Vec<String>) -> Self {
        SchemaSpec {
            feature_columns,
            target_column: "Throughput".into(),
            run_column: Some("run_num".into()),
            target: TargetKind::Throughput { classes: 8 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub timesteps: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            timesteps: 20,
            stride: 1,
        }
    }
}

/// Fitted schema: column layout plus training-split statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub spec: SchemaSpec,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Quantile thresholds for throughput targets; empty for class targets.
    pub thresholds: Vec<f64>,
}

impl DatasetSchema {
    pub fn features(&self) -> usize {
        self.spec.feature_columns.len()
    }

    pub fn classes(&self) -> usize {
        self.spec.target.classes()
    }
}

const STD_FLOOR: f64 = 1e-8;

struct RawRun {
    id: String,
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

fn read_runs(path: &Path, spec: &SchemaSpec) -> Result<Vec<RawRun>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Schema(format!("{}: {other:?}", path.display())),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: unreadable header: {e}", path.display())))?
        .clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}` in {}", path.display())))
    };
    if spec.feature_columns.is_empty() {
        return Err(Error::Schema("schema lists no feature columns".into()));
    }
    let feat_idx: Vec<usize> = spec
        .feature_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;
    let target_idx = find(&spec.target_column)?;
    let run_idx = spec.run_column.as_deref().map(find).transpose()?;

    let mut runs: Vec<RawRun> = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: row + 1,
            column: String::new(),
            message: e.to_string(),
        })?;
        let parse = |idx: usize| -> Result<f64> {
            let cell = rec.get(idx).unwrap_or("");
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row: row + 1,
                    column: headers[idx].to_string(),
                    message: format!("non-numeric value `{cell}`"),
                })
        };
        let feats = feat_idx.iter().map(|&i| parse(i)).collect::<Result<Vec<_>>>()?;
        let target = parse(target_idx)?;
        let run = run_idx.map(|i| rec.get(i).unwrap_or("").to_string()).unwrap_or_default();
        match runs.last_mut() {
            Some(r) if r.id == run => {
                r.features.push(feats);
                r.targets.push(target);
            }
            _ => runs.push(RawRun {
                id: run,
                features: vec![feats],
                targets: vec![target],
            }),
        }
    }
    Ok(runs)
}

/// Raw (unnormalized) windows; targets carried as reals until quantized.
fn raw_windows(runs: &[RawRun], window: &WindowConfig) -> Result<Vec<(SequenceWindow, Vec<f64>)>> {
    if window.timesteps == 0 || window.stride == 0 {
        return Err(Error::Config("window length and stride must be positive".into()));
    }
    let t = window.timesteps;
    let mut out = Vec::new();
    for run in runs {
        let d = run.features.first().map_or(0, Vec::len);
        let mut start = 0;
        while start + t <= run.features.len() {
            let inputs = run.features[start..start + t].iter().flatten().copied().collect();
            out.push((
                SequenceWindow {
                    inputs,
                    targets: vec![0; t],
                    timesteps: t,
                    features: d,
                    run: run.id.clone(),
                    start_row: start,
                },
                run.targets[start..start + t].to_vec(),
            ));
            start += window.stride;
        }
    }
    Ok(out)
}

fn normalize_and_label(
    raw: Vec<(SequenceWindow, Vec<f64>)>,
    schema: &DatasetSchema,
) -> Result<Vec<SequenceWindow>> {
    let d = schema.features();
    raw.into_iter()
        .map(|(mut w, targets)| {
            for (i, v) in w.inputs.iter_mut().enumerate() {
                let j = i % d;
                *v = (*v - schema.means[j]) / schema.stds[j];
            }
            w.targets = match &schema.spec.target {
                TargetKind::Throughput { .. } => quantize_with(&targets, &schema.thresholds),
                TargetKind::Class { classes } => targets
                    .iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        if v < 0.0 || v.fract() != 0.0 || v as usize >= *classes {
                            Err(Error::Parse {
                                row: w.start_row + t + 1,
                                column: schema.spec.target_column.clone(),
                                message: format!("class label {v} outside 0..{classes}"),
                            })
                        } else {
                            Ok(v as usize)
                        }
                    })
                    .collect::<Result<_>>()?,
            };
            Ok(w)
        })
        .collect()
}

/// Windows from `path` normalized with an already fitted schema.
pub fn load_csv(path: &Path, schema: &DatasetSchema, window: &WindowConfig) -> Result<Vec<SequenceWindow>> {
    let runs = read_runs(path, &schema.spec)?;
    normalize_and_label(raw_windows(&runs, window)?, schema)
}

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Vec<SequenceWindow>,
    pub test: Vec<SequenceWindow>,
    pub schema: DatasetSchema,
}

/// Reads, windows and splits a CSV, fitting normalization statistics and
/// class thresholds on the training split's source rows only.
pub fn prepare_csv(path: &Path, spec: &SchemaSpec, window: &WindowConfig, split_cfg: &SplitConfig) -> Result<PreparedData> {
    let runs = read_runs(path, spec)?;
    let raw = raw_windows(&runs, window)?;
    if raw.is_empty() {
        return Err(Error::InsufficientSamples {
            context: format!("windows of length {} in {}", window.timesteps, path.display()),
            required: 1,
            got: 0,
        });
    }
    let (bare, targets): (Vec<SequenceWindow>, Vec<Vec<f64>>) = raw.into_iter().unzip();
    let (train, test) = split(&bare, split_cfg)?;

    // Unique training source rows per run.
    let d = spec.feature_columns.len();
    let mut covered: Vec<(String, usize)> = train
        .iter()
        .flat_map(|w| w.source_rows().map(|r| (w.run.clone(), r)))
        .collect();
    covered.sort();
    covered.dedup();
    let run_pos: std::collections::HashMap<&str, usize> =
        runs.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let rows: Vec<(&[f64], f64)> = covered
        .iter()
        .map(|(run, r)| {
            let raw = &runs[run_pos[run.as_str()]];
            (raw.features[*r].as_slice(), raw.targets[*r])
        })
        .collect();
    let n = rows.len() as f64;
    let mut means = vec![0.0; d];
    for (f, _) in &rows {
        means.iter_mut().zip(*f).for_each(|(m, v)| *m += v / n);
    }
    // Constant columns get their exact value as mean so they normalize to 0.
    for (j, m) in means.iter_mut().enumerate() {
        if let Some((first, _)) = rows.first() {
            if rows.iter().all(|(f, _)| f[j] == first[j]) {
                *m = first[j];
            }
        }
    }
    let mut stds = vec![0.0; d];
    for (f, _) in &rows {
        stds.iter_mut()
            .zip(*f)
            .zip(&means)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
    }
    stds.iter_mut().for_each(|s| *s = s.sqrt().max(STD_FLOOR));
    let thresholds = match &spec.target {
        TargetKind::Throughput { classes } => {
            let tv: Vec<f64> = rows.iter().map(|r| r.1).collect();
            fit_quantile_thresholds(&tv, *classes)?
        }
        TargetKind::Class { .. } => Vec::new(),
    };
    let schema = DatasetSchema {
        spec: spec.clone(),
        means,
        stds,
        thresholds,
    };

    let key = |w: &SequenceWindow| (w.run.clone(), w.start_row);
    let target_of: std::collections::HashMap<(String, usize), &Vec<f64>> =
        bare.iter().zip(&targets).map(|(w, t)| (key(w), t)).collect();
    let relabel = |ws: Vec<SequenceWindow>| {
        let paired = ws
            .into_iter()
            .map(|w| {
                let t = target_of[&key(&w)].clone();
                (w, t)
            })
            .collect();
        normalize_and_label(paired, &schema)
    };
    Ok(PreparedData {
        train: relabel(train)?,
        test: relabel(test)?,
        schema,
    })
}
