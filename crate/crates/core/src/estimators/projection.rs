use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SampleMatrix;
use crate::error::Result;

const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 2;

/// Caps the dimensionality of a representation before Gaussian MI.
///
/// With `vars` variables in one joint estimate, each is limited to
/// `n / (samples_per_dim * vars)` dimensions so the joint stays within
/// `n / samples_per_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DimensionGuard {
    pub samples_per_dim: usize,
    pub seed: u64,
}

impl Default for DimensionGuard {
    fn default() -> Self {
        DimensionGuard {
            samples_per_dim: 10,
            seed: 0x5eed,
        }
    }
}

impl DimensionGuard {
    pub fn cap(&self, n: usize, vars: usize) -> usize {
        (n / (self.samples_per_dim * vars.max(1))).max(1)
    }

    /// Returns `m` unchanged when within the cap, otherwise its projection
    /// on the top principal directions. The flag reports a projection.
    pub fn apply(&self, m: &SampleMatrix, vars: usize) -> Result<(SampleMatrix, bool)> {
        let cap = self.cap(m.n_samples(), vars);
        if m.n_dims() <= cap {
            return Ok((m.clone(), false));
        }
        Ok((project_top_components(m, cap, self.seed)?, true))
    }
}

fn orthonormalize(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Scores of the `k` leading principal components, from a seeded randomized
/// range finder followed by an exact eigen-decomposition in the small basis.
pub fn project_top_components(m: &SampleMatrix, k: usize, seed: u64) -> Result<SampleMatrix> {
    let (n, d) = (m.n_samples(), m.n_dims());
    let k = k.min(d).min(n).max(1);
    let mut a = DMatrix::from_row_slice(n, d, m.values());
    for j in 0..d {
        let mean = a.column(j).mean();
        a.column_mut(j).add_scalar_mut(-mean);
    }
    let l = (k + OVERSAMPLE).min(d).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(d, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormalize(&a * omega);
    for _ in 0..POWER_ITERS {
        let z = orthonormalize(a.transpose() * &q);
        q = orthonormalize(&a * z);
    }
    // B = Q^T A; B B^T = U S^2 U^T; scores = Q U S.
    let b = q.transpose() * &a;
    let eig = SymmetricEigen::new(&b * b.transpose());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let qu = &q * &eig.eigenvectors;
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        for &c in &order[..k] {
            out.push(qu[(i, c)] * eig.eigenvalues[c].max(0.0).sqrt());
        }
    }
    SampleMatrix::new(n, k, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Rank-2 signal embedded in 40 dims plus tiny noise.
    fn low_rank(n: usize) -> SampleMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
        let basis: Vec<f64> = (0..80).map(|_| g()).collect();
        let mut v = Vec::new();
        for _ in 0..n {
            let (s0, s1) = (3.0 * g(), g());
            for j in 0..40 {
                v.push(s0 * basis[j] + s1 * basis[40 + j] + 1e-3 * g());
            }
        }
        SampleMatrix::new(n, 40, v).unwrap()
    }

    #[test]
    fn captures_dominant_variance() {
        let m = low_rank(300);
        let p = project_top_components(&m, 2, 1).unwrap();
        let var = |x: &[f64]| {
            let mu = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| (v - mu).powi(2)).sum::<f64>()
        };
        let total: f64 = (0..40).map(|j| var(&m.column(j))).sum();
        let kept: f64 = (0..2).map(|j| var(&p.column(j))).sum();
        assert!(kept / total > 0.999, "{}", kept / total);
        assert!(var(&p.column(0)) >= var(&p.column(1)));
    }

    #[test]
    fn deterministic_under_seed() {
        let m = low_rank(100);
        assert_eq!(
            project_top_components(&m, 3, 9).unwrap(),
            project_top_components(&m, 3, 9).unwrap()
        );
    }

    #[test]
    fn guard_caps_and_flags() {
        let g = DimensionGuard::default();
        assert_eq!(g.cap(512, 2), 25);
        assert_eq!(g.cap(512, 3), 17);
        let m = low_rank(100);
        let (p, flagged) = g.apply(&m, 2).unwrap();
        assert!(flagged);
        assert_eq!(p.n_dims(), 5);
        let small = SampleMatrix::new(100, 1, (0..100).map(f64::from).collect()).unwrap();
        let (same, flagged) = g.apply(&small, 2).unwrap();
        assert!(!flagged);
        assert_eq!(same, small);
    }
}
