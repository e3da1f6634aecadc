//! Command-line pipeline: `synth -> train -> analyze -> simulate`, plus a
//! batch `estimate` mode.
//!
//! Output layout under `--out DIR`:
//!
//! ```text
//! config.<cmd>.json          effective configuration of each subcommand
//! data/synth.csv, .json      generated dataset and sidecar
//! train/phase1.json          checkpoint after phase 1
//! train/phase2.json          checkpoint after phase 2
//! train/schema.json          fitted dataset schema
//! train/history.json         per-epoch loss and accuracy
//! train/ordering.json        ordering report
//! train/records/             activation records and probe
//! analysis/                  curve CSVs, redundancy and summary JSON
//! sim/trace_<mode>.csv/.json simulation trace and aggregates
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cascade::{self, CascadeConfig, CascadeModel, Mode, OrderingConfig, OrderingReport, Recorder, TrainingHistory};
use crate::data::{self, PreparedData, SchemaSpec, SplitConfig, SynthConfig, SynthSidecar, WindowConfig};
use crate::error::{Error, Result};
use crate::estimators::{
    binning_mi, conditional_gcmi, gcmi, kde_mi_label, plugin_discrete_mi, BinningConfig, KdeConfig, MIEstimate, SampleMatrix,
};
use crate::infoplane::{self, AnalysisConfig, ProbeData, RecordStore};
use crate::nn::{load_checkpoint, save_checkpoint, Batch, LayerActivations};
use crate::splitsim::{self, Scenario};

const PHASE1_KIND: &str = "cascade_phase1";
const PHASE2_KIND: &str = "cascade_phase2";

#[derive(Parser, Debug)]
#[command(name = "dynsplit", version, about = "Dual-mode split-learning pipeline")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed applied to every seeded component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Run both training phases and the ordering check.
    Train(TrainArgs),
    /// Compute information-plane and temporal curves from activation records.
    Analyze,
    /// Simulate split inference over a fluctuating link.
    Simulate(SimulateArgs),
    /// Estimate mutual information from a CSV with a role header.
    Estimate(EstimateArgs),
}

#[derive(Args, Debug, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub windows: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub shuffle_labels: bool,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Dataset CSV; defaults to `<out>/data/synth.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub epochs_phase2: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Adaptive,
    Informative,
    Compressed,
}

impl SimMode {
    fn name(self) -> &'static str {
        match self {
            SimMode::Adaptive => "adaptive",
            SimMode::Informative => "informative",
            SimMode::Compressed => "compressed",
        }
    }

    fn forced(self) -> Option<Mode> {
        match self {
            SimMode::Adaptive => None,
            SimMode::Informative => Some(Mode::Informative),
            SimMode::Compressed => Some(Mode::Compressed),
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    /// Force a mode (baseline) instead of the adaptive policy.
    #[arg(long, value_enum)]
    pub mode: Option<SimMode>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Scenario JSON (link, policy, steps, seed); overrides the run config.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    Plugin,
    Binning,
    Gcmi,
    Kde,
    ConditionalGcmi,
}

#[derive(Args, Debug, Default)]
pub struct EstimateArgs {
    /// CSV whose header cells are roles: x, y, z or ignore (optionally `role:name`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub estimators: Vec<EstimatorName>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// Needed for CSVs without a synthetic sidecar.
    pub schema: Option<SchemaSpec>,
    pub window: Option<WindowConfig>,
    pub split: SplitConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            schema: None,
            window: None,
            split: SplitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordSection {
    pub probe_size: usize,
    pub probe_seed: u64,
}

impl Default for RecordSection {
    fn default() -> Self {
        RecordSection {
            probe_size: 512,
            probe_seed: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateSection {
    pub input: Option<PathBuf>,
    pub estimators: Vec<EstimatorName>,
    pub binning: BinningConfig,
    pub kde: KdeConfig,
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            input: None,
            estimators: vec![EstimatorName::Gcmi],
            binning: BinningConfig::default(),
            kde: KdeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSection {
    pub mode: SimMode,
    pub scenario: Scenario,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            mode: SimMode::Adaptive,
            scenario: Scenario::default(),
        }
    }
}

/// Everything a subcommand needs; written out as `config.<cmd>.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Not serialized, so output trees do not depend on their location.
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub synth: SynthConfig,
    pub data: DataSection,
    pub cascade: CascadeConfig,
    pub ordering: OrderingConfig,
    pub record: RecordSection,
    pub analysis: AnalysisConfig,
    pub simulate: SimulateSection,
    pub estimate: EstimateSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Propagates the global seed to every component seed.
    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.data.split.seed = s;
            self.cascade.seed = s;
            self.ordering.seed = s.wrapping_add(2);
            self.record.probe_seed = s.wrapping_add(10);
            self.analysis.guard.seed = s.wrapping_add(20);
            self.ordering.guard.seed = s.wrapping_add(20);
            self.simulate.scenario.seed = s;
        }
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    fn data_path(&self) -> PathBuf {
        self.data.path.clone().unwrap_or_else(|| self.out_dir().join("data").join("synth.csv"))
    }
}

/// Outcome of a successful invocation: 0, or 1 for a failed verification.
pub type ExitStatus = i32;

/// Builds the effective configuration from file and flags.
pub fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    match &cli.command {
        Command::Synth(a) => {
            if let Some(v) = a.windows {
                cfg.synth.n_windows = v;
            }
            if let Some(v) = a.noise {
                cfg.synth.noise = v;
            }
            if let Some(v) = a.classes {
                cfg.synth.classes = v;
            }
            if a.shuffle_labels {
                cfg.synth.shuffle_labels = true;
            }
        }
        Command::Train(a) => {
            if a.data.is_some() {
                cfg.data.path = a.data.clone();
            }
            if let Some(v) = a.epochs {
                cfg.cascade.epochs_phase1 = v;
            }
            if a.epochs_phase2.is_some() {
                cfg.cascade.epochs_phase2 = a.epochs_phase2;
            }
            if let Some(v) = a.batch_size {
                cfg.cascade.batch_size = v;
            }
        }
        Command::Analyze => {}
        Command::Simulate(a) => {
            if let Some(p) = &a.scenario {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                cfg.simulate.scenario =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            }
            if let Some(m) = a.mode {
                cfg.simulate.mode = m;
            }
            if let Some(s) = a.steps {
                cfg.simulate.scenario.steps = s;
            }
        }
        Command::Estimate(a) => {
            if a.input.is_some() {
                cfg.estimate.input = a.input.clone();
            }
            if !a.estimators.is_empty() {
                cfg.estimate.estimators = a.estimators.clone();
            }
        }
    }
    cfg.apply_seed();
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Analyze => "analyze",
        Command::Simulate(_) => "simulate",
        Command::Estimate(_) => "estimate",
    }
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<ExitStatus> {
    let cfg = resolve(cli)?;
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    infoplane::write_json(&out.join(format!("config.{}.json", command_name(&cli.command))), &cfg)?;
    match cli.command {
        Command::Synth(_) => cmd_synth(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Analyze => cmd_analyze(&cfg),
        Command::Simulate(_) => cmd_simulate(&cfg),
        Command::Estimate(_) => cmd_estimate(&cfg, stdout),
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<ExitStatus> {
    let ds = data::synth_generate(&cfg.synth)?;
    let path = cfg.out_dir().join("data").join("synth.csv");
    data::write_synth(&path, &ds)?;
    log::info!(
        "wrote {} windows to {} (oracle MI {:.3} bits)",
        ds.windows.len(),
        path.display(),
        ds.oracle_mi_bits
    );
    Ok(0)
}

/// Loads and splits the configured dataset, using the synthetic sidecar
/// when one sits next to the CSV.
pub fn load_dataset(cfg: &RunConfig) -> Result<PreparedData> {
    let path = cfg.data_path();
    let side = data::sidecar_path(&path);
    let (spec, window) = if side.exists() && cfg.data.schema.is_none() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sc: SynthSidecar = serde_json::from_str(&text).map_err(|e| Error::serde(&side, e))?;
        (sc.schema, cfg.data.window.clone().unwrap_or(sc.window))
    } else {
        let spec = cfg.data.schema.clone().ok_or_else(|| {
            Error::Config(format!("{} has no sidecar; set data.schema in the config", path.display()))
        })?;
        (spec, cfg.data.window.clone().unwrap_or_default())
    };
    data::prepare_csv(&path, &spec, &window, &cfg.data.split)
}

fn train_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir().join("train")
}

pub fn cmd_train(cfg: &RunConfig) -> Result<ExitStatus> {
    cfg.cascade.validate()?;
    let prepared = load_dataset(cfg)?;
    let dir = train_dir(cfg);
    let rec_dir = dir.join("records");
    if rec_dir.exists() {
        fs::remove_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
    }
    let mut store = RecordStore::create(&rec_dir)?;
    let idx = cascade::select_probe(&prepared.train, cfg.record.probe_size, cfg.record.probe_seed);
    let probe_windows: Vec<_> = idx.iter().map(|&i| prepared.train[i].clone()).collect();
    store.save_probe(&ProbeData::from_windows(&probe_windows)?)?;
    let probe_batch = Batch::from_windows(&probe_windows)?;

    let mut sink = |phase: u8, recs: Vec<LayerActivations>| -> Result<()> {
        for r in &recs {
            store.save(phase, r)?;
        }
        Ok(())
    };
    let mut recorder = Recorder {
        probe: &probe_batch.inputs,
        sink: &mut sink,
    };
    let classes = prepared.schema.classes();
    let phase1 = cascade::train_phase1(&prepared.train, classes, &cfg.cascade, Some(&mut recorder))?;
    save_checkpoint(&dir.join("phase1.json"), PHASE1_KIND, &phase1)?;
    let augmented = cascade::augment(phase1, &cfg.cascade)?;
    let phase2 = cascade::train_phase2(augmented, &prepared.train, &cfg.cascade, Some(&mut recorder))?;
    save_checkpoint(&dir.join("phase2.json"), PHASE2_KIND, &phase2)?;
    infoplane::write_json(&dir.join("schema.json"), &prepared.schema)?;
    infoplane::write_json(&dir.join("history.json"), &phase2.history)?;

    let report = cascade::verify_ordering(&phase2, &prepared.test, &cfg.ordering)?;
    infoplane::write_json(&dir.join("ordering.json"), &report)?;
    log::info!(
        "accuracy informative {:.4}, compressed {:.4}; ordering {}",
        report.modes[0].accuracy,
        report.modes[1].accuracy,
        if report.pass { "passed" } else { "FAILED" }
    );
    Ok(if report.pass { 0 } else { 1 })
}

pub fn load_model(path: &Path) -> Result<CascadeModel> {
    load_checkpoint(path, PHASE2_KIND)
}

pub fn load_phase1(path: &Path) -> Result<CascadeModel> {
    load_checkpoint(path, PHASE1_KIND)
}

pub fn read_ordering(path: &Path) -> Result<OrderingReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::serde(path, e))
}

pub fn read_history(path: &Path) -> Result<TrainingHistory> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::serde(path, e))
}

pub fn cmd_analyze(cfg: &RunConfig) -> Result<ExitStatus> {
    let rec_dir = train_dir(cfg).join("records");
    if !rec_dir.is_dir() {
        return Err(Error::Config(format!(
            "no activation records at {}; run `train` first",
            rec_dir.display()
        )));
    }
    let store = RecordStore::open(&rec_dir)?;
    let analysis = infoplane::analyze(&store, &cfg.analysis)?;
    infoplane::write_analysis(&cfg.out_dir().join("analysis"), &analysis)?;
    log::info!("temporal info spearman {:.3}", analysis.summary.temporal_info_spearman);
    Ok(0)
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<ExitStatus> {
    let ckpt = train_dir(cfg).join("phase2.json");
    if !ckpt.exists() {
        return Err(Error::Config(format!("no checkpoint at {}; run `train` first", ckpt.display())));
    }
    let model = load_model(&ckpt)?;
    let prepared = load_dataset(cfg)?;
    let mut scenario = cfg.simulate.scenario.clone();
    scenario.policy.forced = cfg.simulate.mode.forced();
    let trace = splitsim::run(&model, &prepared.test, &scenario)?;
    let dir = cfg.out_dir().join("sim");
    let name = cfg.simulate.mode.name();
    splitsim::write_trace(
        &trace,
        &dir.join(format!("trace_{name}.csv")),
        &dir.join(format!("trace_{name}.json")),
    )?;
    log::info!(
        "{name}: {} bytes, accuracy {:.4}, {} switches",
        trace.summary.total_message_bytes,
        trace.summary.accuracy,
        trace.summary.switch_count
    );
    Ok(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    X,
    Y,
    Z,
    Ignore,
}

/// Columns of an estimation CSV grouped by role.
#[derive(Debug)]
pub struct RoleColumns {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
}

pub fn read_role_csv(path: &Path) -> Result<RoleColumns> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::serde(path, e))?;
    let header = r.headers().map_err(|e| Error::serde(path, e))?.clone();
    let roles: Vec<Role> = header
        .iter()
        .map(|h| match h.split(':').next().unwrap_or("").to_ascii_lowercase().as_str() {
            "x" => Ok(Role::X),
            "y" => Ok(Role::Y),
            "z" => Ok(Role::Z),
            "ignore" => Ok(Role::Ignore),
            _ => Err(Error::Schema(format!("unknown role `{h}`; expected x, y, z or ignore"))),
        })
        .collect::<Result<_>>()?;
    for need in [Role::X, Role::Y] {
        if !roles.contains(&need) {
            return Err(Error::Schema(format!("role header needs at least one `{need:?}` column").to_lowercase()));
        }
    }
    let mut cols = vec![Vec::new(); roles.len()];
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::serde(path, e))?;
        for (j, role) in roles.iter().enumerate() {
            if *role == Role::Ignore {
                continue;
            }
            let cell = rec.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: i + 2,
                column: header[j].to_string(),
                message: format!("non-numeric value `{cell}`"),
            })?;
            cols[j].push(v);
        }
    }
    let pick = |want: Role| -> Vec<Vec<f64>> {
        roles.iter().zip(&cols).filter(|(r, _)| **r == want).map(|(_, c)| c.clone()).collect()
    };
    Ok(RoleColumns {
        x: pick(Role::X),
        y: pick(Role::Y),
        z: pick(Role::Z),
    })
}

fn integer_symbols(cols: &[Vec<f64>], what: &str) -> Result<Vec<Vec<i64>>> {
    let n = cols.first().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            cols.iter()
                .map(|c| {
                    let v = c[i];
                    if v.fract() == 0.0 && v.abs() < 9.0e15 {
                        Ok(v as i64)
                    } else {
                        Err(Error::Config(format!("{what} needs integer-valued columns, found {v}")))
                    }
                })
                .collect()
        })
        .collect()
}

fn labels(cols: &[Vec<f64>]) -> Result<Vec<usize>> {
    if cols.len() != 1 {
        return Err(Error::Config("kde needs exactly one `y` column of class labels".into()));
    }
    cols[0]
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("kde labels must be non-negative integers, found {v}")))
            }
        })
        .collect()
}

pub fn estimate_columns(cols: &RoleColumns, which: EstimatorName, section: &EstimateSection) -> Result<MIEstimate> {
    let x = SampleMatrix::from_columns(&cols.x)?;
    let y = SampleMatrix::from_columns(&cols.y)?;
    match which {
        EstimatorName::Plugin => Ok(plugin_discrete_mi(
            &integer_symbols(&cols.x, "plugin")?,
            &integer_symbols(&cols.y, "plugin")?,
        )),
        EstimatorName::Binning => binning_mi(&x, &y, &section.binning),
        EstimatorName::Gcmi => gcmi(&x, &y),
        EstimatorName::Kde => kde_mi_label(&labels(&cols.y)?, &x, &section.kde),
        EstimatorName::ConditionalGcmi => {
            if cols.z.is_empty() {
                return Err(Error::Config("conditional_gcmi needs at least one `z` column".into()));
            }
            conditional_gcmi(&x, &y, &SampleMatrix::from_columns(&cols.z)?)
        }
    }
}

pub fn cmd_estimate(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<ExitStatus> {
    let input = cfg
        .estimate
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("estimate needs --input".into()))?;
    let cols = read_role_csv(input)?;
    for &which in &cfg.estimate.estimators {
        let est = estimate_columns(&cols, which, &cfg.estimate)?;
        let line = serde_json::to_string(&est).map_err(|e| Error::serde(input, e))?;
        writeln!(stdout, "{line}").map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(0)
}
