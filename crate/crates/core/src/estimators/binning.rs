use serde::{Deserialize, Serialize};

use super::plugin::plugin_mi_symbols;
use super::{EstimateConfig, EstimatorKind, MIEstimate, SampleMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum RangeRule {
    /// Per-dimension observed min..max.
    MinMax,
    /// Same fixed range for every dimension; values outside are clipped.
    Fixed { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinningConfig {
    pub bins_per_dim: usize,
    pub range: RangeRule,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            bins_per_dim: 30,
            range: RangeRule::MinMax,
        }
    }
}

/// Equal-width bin index of every entry, as one symbol tuple per sample.
/// A constant column maps to a single bin.
pub(crate) fn quantize(m: &SampleMatrix, cfg: &BinningConfig) -> Vec<Vec<u32>> {
    let (n, d) = (m.n_samples(), m.n_dims());
    let bins = cfg.bins_per_dim;
    let ranges: Vec<(f64, f64)> = (0..d)
        .map(|j| match cfg.range {
            RangeRule::Fixed { lo, hi } => (lo, hi),
            RangeRule::MinMax => {
                let col = m.column(j);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        })
        .collect();
    (0..n)
        .map(|i| {
            m.row(i)
                .iter()
                .zip(&ranges)
                .map(|(&v, &(lo, hi))| {
                    if hi <= lo {
                        return 0;
                    }
                    let b = ((v - lo) / (hi - lo) * bins as f64).floor();
                    b.clamp(0.0, (bins - 1) as f64) as u32
                })
                .collect()
        })
        .collect()
}

/// Quantizes both variables per dimension and takes the plug-in MI of the
/// resulting symbol tuples.
pub fn binning_mi(x: &SampleMatrix, y: &SampleMatrix, cfg: &BinningConfig) -> Result<MIEstimate> {
    if cfg.bins_per_dim < 2 {
        return Err(Error::Config(format!("bins_per_dim must be >= 2, got {}", cfg.bins_per_dim)));
    }
    if let RangeRule::Fixed { lo, hi } = cfg.range {
        if !(hi > lo) {
            return Err(Error::Config(format!("fixed bin range needs hi > lo, got {lo}..{hi}")));
        }
    }
    if x.n_samples() != y.n_samples() {
        return Err(Error::shape(&[x.n_samples()], &[y.n_samples()], "binning_mi sample counts"));
    }
    let bits = plugin_mi_symbols(&quantize(x, cfg), &quantize(y, cfg));
    Ok(MIEstimate {
        bits,
        estimator: EstimatorKind::Binning,
        config: EstimateConfig {
            samples: x.n_samples(),
            bins: Some(cfg.bins_per_dim),
            range_rule: Some(cfg.range.clone()),
            dims: Some(vec![x.n_dims(), y.n_dims()]),
            ..Default::default()
        },
    })
}
