//! Datasets: windowed sequences, CSV ingestion, synthetic generation,
//! throughput quantization and leakage-free splitting.

mod csv_load;
mod quantize;
mod split;
mod synth;

use serde::{Deserialize, Serialize};

pub use csv_load::{load_csv, prepare_csv, DatasetSchema, PreparedData, SchemaSpec, TargetKind, WindowConfig};
pub use quantize::{fit_quantile_thresholds, quantize_throughput, quantize_with};
pub use split::{split, SplitConfig};
pub use synth::{sidecar_path, synth_generate, write_synth, SynthConfig, SynthDataset, SynthSidecar};

/// One sample: `T x D` inputs (row-major, timestep-major) and one class per
/// timestep. `run` and `start_row` identify the source rows
/// `start_row .. start_row + T` of that run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceWindow {
    pub inputs: Vec<f64>,
    pub targets: Vec<usize>,
    pub timesteps: usize,
    pub features: usize,
    pub run: String,
    pub start_row: usize,
}

impl SequenceWindow {
    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Feature vector at 0-based timestep `t`.
    pub fn step(&self, t: usize) -> &[f64] {
        &self.inputs[t * self.features..(t + 1) * self.features]
    }

    pub fn source_rows(&self) -> std::ops::Range<usize> {
        self.start_row..self.start_row + self.timesteps
    }

    pub fn overlaps(&self, other: &SequenceWindow) -> bool {
        let (a, b) = (self.source_rows(), other.source_rows());
        self.run == other.run && a.start < b.end && b.start < a.end
    }
}
