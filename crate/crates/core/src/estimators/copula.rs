use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::digamma;

use super::{EstimateConfig, EstimatorKind, MIEstimate, SampleMatrix};
use crate::error::{Error, Result};

const RIDGE: f64 = 1e-10;

/// Average ranks (1-based) of `v`; ties share the mean of their positions.
pub(crate) fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Per-column rank transform to standard normal marginals.
pub fn copula_transform(x: &SampleMatrix) -> Result<SampleMatrix> {
    let n = x.n_samples();
    if n < 3 {
        return Err(Error::InsufficientSamples {
            context: "copula transform".into(),
            required: 3,
            got: n,
        });
    }
    let normal = Normal::standard();
    let cols: Vec<Vec<f64>> = (0..x.n_dims())
        .map(|j| {
            average_ranks(&x.column(j))
                .into_iter()
                .map(|r| {
                    let p = r / (n as f64 + 1.0);
                    if p == 0.5 {
                        0.0
                    } else {
                        normal.inverse_cdf(p)
                    }
                })
                .collect()
        })
        .collect();
    SampleMatrix::from_columns(&cols)
}

struct Joint {
    cov: DMatrix<f64>,
    n: usize,
}

impl Joint {
    /// Sample covariance of the horizontally stacked parts.
    fn new(parts: &[&SampleMatrix]) -> Result<Self> {
        let m = SampleMatrix::hstack(parts)?;
        let (n, d) = (m.n_samples(), m.n_dims());
        if n < d + 2 {
            return Err(Error::InsufficientSamples {
                context: format!("gaussian MI over {d} dimensions"),
                required: d + 2,
                got: n,
            });
        }
        let mut centered = m.values().to_vec();
        for j in 0..d {
            let mean = (0..n).map(|i| centered[i * d + j]).sum::<f64>() / n as f64;
            for i in 0..n {
                centered[i * d + j] -= mean;
            }
        }
        let mut cov = vec![0.0; d * d];
        crate::nn::gemm(d, n, d, 1.0 / (n as f64 - 1.0), &centered, true, &centered, false, 0.0, &mut cov);
        Ok(Joint {
            cov: DMatrix::from_row_slice(d, d, &cov),
            n,
        })
    }

    /// Sum of log Cholesky diagonals (half the log-determinant) of the
    /// sub-block over `dims`, or `None` when not positive definite.
    fn half_logdet(&self, dims: &[usize]) -> Option<f64> {
        let sub = DMatrix::from_fn(dims.len(), dims.len(), |a, b| self.cov[(dims[a], dims[b])]);
        let chol = sub.cholesky()?;
        Some(chol.l().diagonal().iter().map(|v| v.ln()).sum())
    }

    fn add_ridge(&mut self) {
        for i in 0..self.cov.nrows() {
            self.cov[(i, i)] += RIDGE;
        }
    }
}

/// Bias-corrected Gaussian entropy term (up to constants that cancel in MI).
fn corrected(half_logdet: f64, d: usize, n: usize) -> f64 {
    let dterm = (std::f64::consts::LN_2 - (n as f64 - 1.0).ln()) / 2.0;
    let psi: f64 = (1..=d).map(|i| digamma((n as f64 - i as f64) / 2.0) / 2.0).sum();
    half_logdet - d as f64 * dterm - psi
}

/// Drops zero-variance columns; they carry no information.
fn informative_columns(m: &SampleMatrix) -> Option<SampleMatrix> {
    let keep: Vec<Vec<f64>> = (0..m.n_dims())
        .map(|j| m.column(j))
        .filter(|c| c.iter().any(|&v| v != c[0]))
        .collect();
    if keep.is_empty() {
        None
    } else {
        SampleMatrix::from_columns(&keep).ok()
    }
}

/// MI terms `H(a) + H(b) - H(a, b)` (nats) for each block pair of one joint
/// covariance. If any block is singular, the ridge is added once and every
/// term is recomputed on the same regularized matrix.
fn block_mis(joint: &mut Joint, pairs: &[(&[usize], &[usize])], regularized: &mut bool) -> Vec<f64> {
    let eval = |j: &Joint| -> Option<Vec<f64>> {
        let n = j.n;
        pairs
            .iter()
            .map(|&(a, b)| {
                let ab: Vec<usize> = a.iter().chain(b).copied().collect();
                let ha = corrected(j.half_logdet(a)?, a.len(), n);
                let hb = corrected(j.half_logdet(b)?, b.len(), n);
                let hab = corrected(j.half_logdet(&ab)?, ab.len(), n);
                Some(ha + hb - hab)
            })
            .collect()
    };
    match eval(joint) {
        Some(v) => v,
        None => {
            *regularized = true;
            joint.add_ridge();
            eval(joint).unwrap_or_else(|| vec![0.0; pairs.len()])
        }
    }
}

fn check_pair(x: &SampleMatrix, y: &SampleMatrix) -> Result<()> {
    if x.n_samples() != y.n_samples() {
        return Err(Error::shape(&[x.n_samples()], &[y.n_samples()], "paired samples"));
    }
    let n = x.n_samples();
    if n < 3 {
        return Err(Error::InsufficientSamples {
            context: "gaussian MI".into(),
            required: 3,
            got: n,
        });
    }
    Ok(())
}

fn estimate(bits: f64, kind: EstimatorKind, n: usize, dims: Vec<usize>, regularized: bool) -> MIEstimate {
    let total: usize = dims.iter().sum();
    MIEstimate {
        bits,
        estimator: kind,
        config: EstimateConfig {
            samples: n,
            bias_corrected: Some(true),
            dimension_warning: n < 10 * total,
            dims: Some(dims),
            regularized,
            ..Default::default()
        },
    }
}

/// Parametric Gaussian MI in bits with the psi-function bias correction,
/// applied to the samples as given (no copula step).
pub fn gaussian_mi_bits(x: &SampleMatrix, y: &SampleMatrix) -> Result<f64> {
    check_pair(x, y)?;
    let (Some(x), Some(y)) = (informative_columns(x), informative_columns(y)) else {
        return Ok(0.0);
    };
    let mut joint = Joint::new(&[&x, &y])?;
    let a: Vec<usize> = (0..x.n_dims()).collect();
    let b: Vec<usize> = (x.n_dims()..x.n_dims() + y.n_dims()).collect();
    let mut reg = false;
    Ok(block_mis(&mut joint, &[(&a, &b)], &mut reg)[0] / std::f64::consts::LN_2)
}

/// Gaussian-copula MI: a lower bound on the MI of the underlying variables,
/// invariant to strictly monotone per-column transforms.
pub fn gcmi(x: &SampleMatrix, y: &SampleMatrix) -> Result<MIEstimate> {
    check_pair(x, y)?;
    let n = x.n_samples();
    let dims = vec![x.n_dims(), y.n_dims()];
    if n < 10 * (x.n_dims() + y.n_dims()) {
        log::warn!(
            "gcmi: {n} samples for {} dimensions; estimate may be unreliable",
            x.n_dims() + y.n_dims()
        );
    }
    let (cx, cy) = (copula_transform(x)?, copula_transform(y)?);
    let (Some(cx), Some(cy)) = (informative_columns(&cx), informative_columns(&cy)) else {
        return Ok(estimate(0.0, EstimatorKind::Gcmi, n, dims, false));
    };
    let mut joint = Joint::new(&[&cx, &cy])?;
    let a: Vec<usize> = (0..cx.n_dims()).collect();
    let b: Vec<usize> = (cx.n_dims()..cx.n_dims() + cy.n_dims()).collect();
    let mut reg = false;
    let nats = block_mis(&mut joint, &[(&a, &b)], &mut reg)[0];
    Ok(estimate(nats / std::f64::consts::LN_2, EstimatorKind::Gcmi, n, dims, reg))
}

/// `I(X;Y|Z) = I(X;Y,Z) - I(X;Z)` in the copula-Gaussian model.
pub fn conditional_gcmi(x: &SampleMatrix, y: &SampleMatrix, z: &SampleMatrix) -> Result<MIEstimate> {
    check_pair(x, y)?;
    check_pair(x, z)?;
    let n = x.n_samples();
    let cx = informative_columns(&copula_transform(x)?);
    let cy = informative_columns(&copula_transform(y)?);
    let cz = informative_columns(&copula_transform(z)?);
    let mut reg = false;
    let nats = match (&cx, &cy) {
        (Some(cx), Some(cy)) => {
            let dx = cx.n_dims();
            let dy = cy.n_dims();
            let a: Vec<usize> = (0..dx).collect();
            let yi: Vec<usize> = (dx..dx + dy).collect();
            match &cz {
                None => {
                    let mut joint = Joint::new(&[cx, cy])?;
                    block_mis(&mut joint, &[(&a, &yi)], &mut reg)[0]
                }
                Some(cz) => {
                    let mut joint = Joint::new(&[cx, cy, cz])?;
                    let zi: Vec<usize> = (dx + dy..dx + dy + cz.n_dims()).collect();
                    let yz: Vec<usize> = (dx..dx + dy + cz.n_dims()).collect();
                    let v = block_mis(&mut joint, &[(&a, &yz), (&a, &zi)], &mut reg);
                    v[0] - v[1]
                }
            }
        }
        _ => 0.0,
    };
    let mut e = estimate(
        nats / std::f64::consts::LN_2,
        EstimatorKind::ConditionalGcmi,
        n,
        vec![x.n_dims(), y.n_dims(), z.n_dims()],
        reg,
    );
    e.config.dims = Some(vec![x.n_dims(), y.n_dims()]);
    e.config.conditioning_dims = Some(z.n_dims());
    Ok(e)
}
