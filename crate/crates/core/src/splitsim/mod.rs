//! Discrete-time split-inference simulator: the UE encodes a window, an
//! orchestrator picks which latent code to send over a Markov-modulated
//! link, and the edge decodes and scores the prediction.

mod wire;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cascade::{CascadeModel, Mode};
use crate::data::SequenceWindow;
use crate::error::{Error, Result};
use crate::nn::{Batch, Tensor};

pub use wire::{decode_message, encode_message, HEADER_BYTES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkState {
    Normal,
    Congested,
}

impl LinkState {
    fn name(self) -> &'static str {
        match self {
            LinkState::Normal => "normal",
            LinkState::Congested => "congested",
        }
    }
}

/// Two-state Markov bandwidth process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkModel {
    /// Bytes per step in the normal state.
    pub normal_bandwidth: f64,
    /// Bytes per step while congested.
    pub congested_bandwidth: f64,
    pub p_normal_to_congested: f64,
    pub p_congested_to_normal: f64,
    /// Added to every message, in steps.
    pub base_latency: f64,
    pub initial: LinkState,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            normal_bandwidth: 4096.0,
            congested_bandwidth: 256.0,
            p_normal_to_congested: 0.1,
            p_congested_to_normal: 0.1,
            base_latency: 0.01,
            initial: LinkState::Normal,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<()> {
        let p_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.congested_bandwidth > 0.0 && self.congested_bandwidth < self.normal_bandwidth) {
            return Err(Error::Config(format!(
                "need 0 < congested bandwidth ({}) < normal bandwidth ({})",
                self.congested_bandwidth, self.normal_bandwidth
            )));
        }
        if !p_ok(self.p_normal_to_congested) || !p_ok(self.p_congested_to_normal) {
            return Err(Error::Config("transition probabilities must lie in [0, 1]".into()));
        }
        if !(self.base_latency >= 0.0) {
            return Err(Error::Config("base latency must be >= 0".into()));
        }
        Ok(())
    }

    pub fn bandwidth(&self, state: LinkState) -> f64 {
        match state {
            LinkState::Normal => self.normal_bandwidth,
            LinkState::Congested => self.congested_bandwidth,
        }
    }
}

/// One Markov transition from `state`.
pub fn link_step<R: Rng>(link: &LinkModel, state: LinkState, rng: &mut R) -> LinkState {
    let u: f64 = rng.random();
    match state {
        LinkState::Normal if u < link.p_normal_to_congested => LinkState::Congested,
        LinkState::Congested if u < link.p_congested_to_normal => LinkState::Normal,
        s => s,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorPolicy {
    /// Minimum recent compressed-mode accuracy for switching down.
    pub accuracy_floor: f64,
    /// Minimum steps between mode changes; the start counts as a change.
    pub hysteresis: usize,
    /// Feedback arrives every this many steps.
    pub feedback_period: usize,
    /// Sliding window of scored steps behind each feedback report.
    pub feedback_window: usize,
    /// Bypass the policy and always use this mode.
    pub forced: Option<Mode>,
}

impl Default for OrchestratorPolicy {
    fn default() -> Self {
        OrchestratorPolicy {
            accuracy_floor: 0.3,
            hysteresis: 5,
            feedback_period: 10,
            feedback_window: 50,
            forced: None,
        }
    }
}

impl OrchestratorPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.hysteresis == 0 || self.feedback_period == 0 || self.feedback_window == 0 {
            return Err(Error::Config("hysteresis, feedback period and window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Last reported accuracy per mode; `None` when the window held no steps of
/// that mode, which the policy treats optimistically.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecentAccuracy {
    pub informative: Option<f64>,
    pub compressed: Option<f64>,
}

pub fn policy_decide(
    policy: &OrchestratorPolicy,
    link: LinkState,
    recent: &RecentAccuracy,
    steps_since_switch: usize,
    current: Mode,
) -> Mode {
    if let Some(m) = policy.forced {
        return m;
    }
    let wanted = if link == LinkState::Congested && recent.compressed.is_none_or(|a| a >= policy.accuracy_floor) {
        Mode::Compressed
    } else {
        Mode::Informative
    };
    if wanted != current && steps_since_switch < policy.hysteresis {
        current
    } else {
        wanted
    }
}

pub fn payload_bytes(mode: Mode, model: &CascadeModel) -> Result<usize> {
    Ok(model.payload_dim(mode)? * 4)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub link: LinkModel,
    pub policy: OrchestratorPolicy,
    pub steps: usize,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            link: LinkModel::default(),
            policy: OrchestratorPolicy::default(),
            steps: 2000,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub step: usize,
    pub link_state: LinkState,
    pub mode: Mode,
    pub payload_bytes: usize,
    pub message_bytes: usize,
    pub latency: f64,
    /// Per-timestep correctness, `'1'` or `'0'` per timestep.
    pub correct_mask: String,
}

impl SimRow {
    pub fn correct(&self) -> usize {
        self.correct_mask.bytes().filter(|&b| b == b'1').count()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.correct_mask.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub steps: usize,
    pub seed: u64,
    pub total_payload_bytes: u64,
    pub total_message_bytes: u64,
    pub mean_latency: f64,
    pub accuracy: f64,
    pub accuracy_informative: Option<f64>,
    pub accuracy_compressed: Option<f64>,
    pub steps_informative: usize,
    pub steps_compressed: usize,
    pub switch_count: usize,
    pub congested_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub rows: Vec<SimRow>,
    pub summary: SimSummary,
}

fn mode_accuracy(rows: &[SimRow], mode: Mode) -> Option<f64> {
    let (c, n) = rows
        .iter()
        .filter(|r| r.mode == mode)
        .fold((0usize, 0usize), |(c, n), r| (c + r.correct(), n + r.correct_mask.len()));
    (n > 0).then(|| c as f64 / n as f64)
}

/// Aggregates computed from rows only.
pub fn summarize(rows: &[SimRow], seed: u64) -> SimSummary {
    let n = rows.len();
    let (correct, total) = rows
        .iter()
        .fold((0usize, 0usize), |(c, t), r| (c + r.correct(), t + r.correct_mask.len()));
    SimSummary {
        steps: n,
        seed,
        total_payload_bytes: rows.iter().map(|r| r.payload_bytes as u64).sum(),
        total_message_bytes: rows.iter().map(|r| r.message_bytes as u64).sum(),
        mean_latency: rows.iter().map(|r| r.latency).sum::<f64>() / n.max(1) as f64,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        accuracy_informative: mode_accuracy(rows, Mode::Informative),
        accuracy_compressed: mode_accuracy(rows, Mode::Compressed),
        steps_informative: rows.iter().filter(|r| r.mode == Mode::Informative).count(),
        steps_compressed: rows.iter().filter(|r| r.mode == Mode::Compressed).count(),
        switch_count: rows.windows(2).filter(|w| w[0].mode != w[1].mode).count(),
        congested_fraction: rows.iter().filter(|r| r.link_state == LinkState::Congested).count() as f64
            / n.max(1) as f64,
    }
}

fn feedback(rows: &[SimRow], window: usize) -> RecentAccuracy {
    let recent = &rows[rows.len().saturating_sub(window)..];
    RecentAccuracy {
        informative: mode_accuracy(recent, Mode::Informative),
        compressed: mode_accuracy(recent, Mode::Compressed),
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Runs `steps` steps over the window stream (cycled in order).
pub fn run(model: &CascadeModel, stream: &[SequenceWindow], scenario: &Scenario) -> Result<SimTrace> {
    if stream.is_empty() {
        return Err(Error::Contract("simulation needs a non-empty window stream".into()));
    }
    scenario.link.validate()?;
    scenario.policy.validate()?;
    let policy = &scenario.policy;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut state = scenario.link.initial;
    let mut rows: Vec<SimRow> = Vec::with_capacity(scenario.steps);
    let mut recent = RecentAccuracy::default();
    let mut mode = policy_decide(policy, state, &recent, usize::MAX, Mode::Informative);
    let mut since_switch = 0usize;

    for step in 0..scenario.steps {
        if step > 0 {
            state = link_step(&scenario.link, state, &mut rng);
            if step % policy.feedback_period == 0 {
                recent = feedback(&rows, policy.feedback_window);
            }
            let next = policy_decide(policy, state, &recent, since_switch, mode);
            if next != mode {
                mode = next;
                since_switch = 0;
            }
        }
        since_switch += 1;

        let window = &stream[step % stream.len()];
        let batch = Batch::from_windows(std::slice::from_ref(window))?;
        let code = model.network.encode(&batch.inputs, mode)?;
        let message = encode_message(mode, code.values());
        let (rx_mode, rx_code) = decode_message(&message)?;
        let received = Tensor::from_vec(&[1, rx_code.len()], rx_code.iter().map(|&v| f64::from(v)).collect())?;
        let probs = model.network.decode(&received, rx_mode)?;
        let k = probs.inner_dim();
        let mask: String = probs
            .values()
            .chunks(k)
            .zip(&window.targets)
            .map(|(row, &y)| if argmax(row) == y { '1' } else { '0' })
            .collect();
        rows.push(SimRow {
            step,
            link_state: state,
            mode,
            payload_bytes: message.len() - HEADER_BYTES,
            message_bytes: message.len(),
            latency: message.len() as f64 / scenario.link.bandwidth(state) + scenario.link.base_latency,
            correct_mask: mask,
        });
    }
    let summary = summarize(&rows, scenario.seed);
    Ok(SimTrace { rows, summary })
}

pub const TRACE_HEADER: [&str; 8] = [
    "step",
    "link_state",
    "mode",
    "payload_bytes",
    "message_bytes",
    "latency",
    "correct",
    "correct_mask",
];

/// Writes the rows as CSV and the summary as JSON.
pub fn write_trace(trace: &SimTrace, csv_path: &Path, summary_path: &Path) -> Result<()> {
    for p in [csv_path, summary_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut w = csv::Writer::from_path(csv_path).map_err(|e| Error::serde(csv_path, e))?;
    w.write_record(TRACE_HEADER).map_err(|e| Error::serde(csv_path, e))?;
    for r in &trace.rows {
        w.write_record([
            r.step.to_string(),
            r.link_state.name().to_string(),
            match r.mode {
                Mode::Informative => "informative".into(),
                Mode::Compressed => "compressed".into(),
            },
            r.payload_bytes.to_string(),
            r.message_bytes.to_string(),
            r.latency.to_string(),
            r.correct().to_string(),
            r.correct_mask.clone(),
        ])
        .map_err(|e| Error::serde(csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    let text = serde_json::to_string_pretty(&trace.summary).map_err(|e| Error::serde(summary_path, e))?;
    fs::write(summary_path, text).map_err(|e| Error::io(summary_path, e))
}

/// Reads rows written by [`write_trace`].
pub fn read_trace_rows(csv_path: &Path) -> Result<Vec<SimRow>> {
    let mut r = csv::Reader::from_path(csv_path).map_err(|e| Error::serde(csv_path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::serde(csv_path, e))?;
        let bad = |col: usize| Error::Parse {
            row: i + 2,
            column: TRACE_HEADER[col].into(),
            message: format!("invalid value `{}`", rec.get(col).unwrap_or("")),
        };
        let get = |col: usize| rec.get(col).unwrap_or("");
        rows.push(SimRow {
            step: get(0).parse().map_err(|_| bad(0))?,
            link_state: match get(1) {
                "normal" => LinkState::Normal,
                "congested" => LinkState::Congested,
                _ => return Err(bad(1)),
            },
            mode: get(2).parse().map_err(|_| bad(2))?,
            payload_bytes: get(3).parse().map_err(|_| bad(3))?,
            message_bytes: get(4).parse().map_err(|_| bad(4))?,
            latency: get(5).parse().map_err(|_| bad(5))?,
            correct_mask: get(7).to_string(),
        });
    }
    Ok(rows)
}

/// Smallest distance between consecutive mode changes, counting the start
/// (step 0) as a change. `None` when the mode never changes.
pub fn min_switch_gap(rows: &[SimRow]) -> Option<usize> {
    let mut last = 0usize;
    let mut gap: Option<usize> = None;
    for w in rows.windows(2) {
        if w[0].mode != w[1].mode {
            let g = w[1].step - last;
            gap = Some(gap.map_or(g, |x| x.min(g)));
            last = w[1].step;
        }
    }
    gap
}
