//! Mutual-information estimators. Every estimate is reported in bits.

mod binning;
mod copula;
mod kde;
mod plugin;
mod projection;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use binning::{binning_mi, BinningConfig, RangeRule};
pub(crate) use copula::average_ranks;
pub use copula::{conditional_gcmi, copula_transform, gcmi, gaussian_mi_bits};
pub use kde::{kde_mi_label, KdeBandwidth, KdeConfig};
pub use plugin::{plugin_discrete_mi, plugin_entropy_bits, plugin_mi_symbols};
pub use projection::{project_top_components, DimensionGuard};

/// `n x d` real samples, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    n_samples: usize,
    n_dims: usize,
    values: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(n_samples: usize, n_dims: usize, values: Vec<f64>) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::InsufficientSamples {
                context: "sample matrix".into(),
                required: 2,
                got: n_samples,
            });
        }
        if n_dims == 0 || values.len() != n_samples * n_dims {
            return Err(Error::shape(&[n_samples, n_dims], &[values.len()], "sample matrix values"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Contract("sample matrix contains NaN".into()));
        }
        Ok(SampleMatrix {
            n_samples,
            n_dims,
            values,
        })
    }

    pub fn from_column(col: &[f64]) -> Result<Self> {
        SampleMatrix::new(col.len(), 1, col.to_vec())
    }

    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let n = cols.first().map_or(0, Vec::len);
        let d = cols.len();
        let mut v = vec![0.0; n * d];
        for (j, c) in cols.iter().enumerate() {
            if c.len() != n {
                return Err(Error::shape(&[n], &[c.len()], "column length"));
            }
            for (i, x) in c.iter().enumerate() {
                v[i * d + j] = *x;
            }
        }
        SampleMatrix::new(n, d, v)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_samples).map(|i| self.values[i * self.n_dims + j]).collect()
    }

    /// Applies `f` to every entry of column `j`.
    pub fn map_column(&self, j: usize, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_samples {
            let v = &mut out.values[i * self.n_dims + j];
            *v = f(*v);
        }
        out
    }

    /// Column-wise concatenation.
    pub fn hstack(parts: &[&SampleMatrix]) -> Result<Self> {
        let n = parts.first().map_or(0, |p| p.n_samples);
        if parts.iter().any(|p| p.n_samples != n) {
            return Err(Error::Contract("hstack of matrices with different sample counts".into()));
        }
        let d: usize = parts.iter().map(|p| p.n_dims).sum();
        let mut v = Vec::with_capacity(n * d);
        for i in 0..n {
            for p in parts {
                v.extend_from_slice(p.row(i));
            }
        }
        SampleMatrix::new(n, d, v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Binning,
    Plugin,
    Kde,
    Gcmi,
    ConditionalGcmi,
}

/// Configuration echo attached to every estimate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range_rule: Option<RangeRule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth_rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias_corrected: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditioning_dims: Option<usize>,
    /// Covariance needed a ridge to be positive definite.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub regularized: bool,
    /// Fewer than 10 samples per dimension.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub dimension_warning: bool,
    /// Labels dropped for having fewer than two samples.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub excluded_labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    pub bits: f64,
    pub estimator: EstimatorKind,
    pub config: EstimateConfig,
}

impl MIEstimate {
    /// Estimate floored at zero, for plotting. `bits` itself is never clamped.
    pub fn clamped_bits(&self) -> f64 {
        self.bits.max(0.0)
    }
}

/// Information-bottleneck Lagrangian `I(X;H) - beta * I(H;Y)`.
pub fn ib_lagrangian(i_xh: f64, i_yh: f64, beta: f64) -> Result<f64> {
    if !(i_xh.is_finite() && i_yh.is_finite() && beta.is_finite()) || beta < 0.0 {
        return Err(Error::Contract(format!(
            "ib_lagrangian needs finite inputs and beta >= 0 (got {i_xh}, {i_yh}, {beta})"
        )));
    }
    Ok(i_xh - beta * i_yh)
}
