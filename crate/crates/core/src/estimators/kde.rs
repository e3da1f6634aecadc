use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EstimateConfig, EstimatorKind, MIEstimate, SampleMatrix};
use crate::error::{Error, Result};

/// Kernel width for the pairwise-distance mixture-entropy bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum KdeBandwidth {
    /// `sigma^2 = factor * total variance of T`. The total variance equals
    /// half the mean squared pairwise distance.
    RelativeVariance { factor: f64 },
    /// Fixed per-dimension kernel variance.
    Fixed { variance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KdeConfig {
    pub bandwidth: KdeBandwidth,
}

impl Default for KdeConfig {
    fn default() -> Self {
        KdeConfig {
            bandwidth: KdeBandwidth::RelativeVariance { factor: 0.1 },
        }
    }
}

impl KdeBandwidth {
    fn rule_name(&self) -> String {
        match self {
            KdeBandwidth::RelativeVariance { factor } => format!("{factor} x total variance"),
            KdeBandwidth::Fixed { .. } => "fixed".into(),
        }
    }
}

const BLOCK: usize = 128;

/// Upper bound on `I(Y;T)` treating `T` as a Gaussian mixture centred on the
/// samples. `H(T) - sum_y p(y) H(T|y)` using the pairwise-distance bound;
/// the kernel entropy constants cancel.
pub fn kde_mi_label(y: &[usize], t: &SampleMatrix, cfg: &KdeConfig) -> Result<MIEstimate> {
    if y.len() != t.n_samples() {
        return Err(Error::shape(&[t.n_samples()], &[y.len()], "kde labels"));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in y {
        *counts.entry(l).or_insert(0) += 1;
    }
    let excluded: Vec<usize> = counts.iter().filter(|(_, &c)| c < 2).map(|(&l, _)| l).collect();
    let keep: Vec<usize> = (0..y.len()).filter(|&i| !excluded.contains(&y[i])).collect();
    let labels: Vec<usize> = keep.iter().map(|&i| y[i]).collect();
    let n = keep.len();
    let d = t.n_dims();
    let mut points = Vec::with_capacity(n * d);
    for &i in &keep {
        points.extend_from_slice(t.row(i));
    }

    let total_var = total_variance(&points, n, d);
    let variance = match cfg.bandwidth {
        KdeBandwidth::RelativeVariance { factor } => factor * total_var,
        KdeBandwidth::Fixed { variance } => variance,
    };
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::Config(format!("kernel variance must be finite and >= 0, got {variance}")));
    }

    let classes = labels.iter().collect::<std::collections::BTreeSet<_>>().len();
    let bits = if classes < 2 || total_var == 0.0 || variance == 0.0 {
        0.0
    } else {
        mixture_mi(&points, &labels, n, d, variance) / std::f64::consts::LN_2
    };
    if !excluded.is_empty() {
        log::warn!("kde: labels {excluded:?} have fewer than two samples and were excluded");
    }
    Ok(MIEstimate {
        bits,
        estimator: EstimatorKind::Kde,
        config: EstimateConfig {
            samples: n,
            bandwidth_rule: Some(cfg.bandwidth.rule_name()),
            kernel_variance: Some(variance),
            dims: Some(vec![d]),
            excluded_labels: excluded,
            ..Default::default()
        },
    })
}

fn total_variance(points: &[f64], n: usize, d: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    (0..d)
        .map(|j| {
            let mean = (0..n).map(|i| points[i * d + j]).sum::<f64>() / n as f64;
            (0..n).map(|i| (points[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64
        })
        .sum()
}

fn logsumexp(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Nats. Rows are processed in blocks; each block's squared distances to all
/// points come from one matrix product.
fn mixture_mi(points: &[f64], labels: &[usize], n: usize, d: usize, variance: f64) -> f64 {
    let norms: Vec<f64> = points.chunks(d).map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut class_size: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *class_size.entry(l).or_insert(0) += 1;
    }
    let scale = -1.0 / (2.0 * variance);
    let mut h_total = 0.0;
    let mut h_cond = 0.0;
    let mut dots = vec![0.0; BLOCK * n];
    for start in (0..n).step_by(BLOCK) {
        let rows = BLOCK.min(n - start);
        let block = &points[start * d..(start + rows) * d];
        crate::nn::gemm(rows, d, n, 1.0, block, false, points, true, 0.0, &mut dots[..rows * n]);
        for r in 0..rows {
            let i = start + r;
            let row = &dots[r * n..(r + 1) * n];
            let logk = |j: usize| scale * (norms[i] + norms[j] - 2.0 * row[j]).max(0.0);
            let all = logsumexp((0..n).map(logk)) - (n as f64).ln();
            let same = logsumexp((0..n).filter(|&j| labels[j] == labels[i]).map(logk))
                - (class_size[&labels[i]] as f64).ln();
            h_total -= all;
            h_cond -= same;
        }
    }
    // Each class term is weighted by p(y); summing over its members divides
    // by n overall.
    (h_total - h_cond) / n as f64
}
