mod common;

use common::{discrete_chain, gaussian_mi_closed_form, gaussian_pair};
use dynsplit::estimators::{
    binning_mi, conditional_gcmi, gcmi, kde_mi_label, plugin_discrete_mi, plugin_entropy_bits, BinningConfig, KdeConfig,
    SampleMatrix,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn gcmi_matches_bivariate_closed_form() {
    for (i, rho) in [0.3, 0.5, 0.9].into_iter().enumerate() {
        let (x, y) = gaussian_pair(10_000, rho, 40 + i as u64);
        let est = gcmi(&x, &y).unwrap().bits;
        let truth = gaussian_mi_closed_form(rho);
        assert!((est - truth).abs() < 0.02, "rho {rho}: {est} vs {truth}");
    }
}

#[test]
fn binning_matches_bivariate_closed_form() {
    for (i, rho) in [0.3, 0.5, 0.9].into_iter().enumerate() {
        let (x, y) = gaussian_pair(100_000, rho, 50 + i as u64);
        let est = binning_mi(&x, &y, &BinningConfig::default()).unwrap().bits;
        let truth = gaussian_mi_closed_form(rho);
        assert!((est - truth).abs() < 0.1, "rho {rho}: {est} vs {truth}");
    }
}

/// Joint Gaussian `[x; y]` with a random covariance; returns samples and the
/// closed-form MI `-1/2 log2(det S / (det Sxx det Syy))`.
fn correlated_blocks(dx: usize, dy: usize, n: usize, seed: u64) -> (SampleMatrix, SampleMatrix, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dx + dy;
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
    let l = cov.clone().cholesky().unwrap().l();
    let mut xs = Vec::with_capacity(n * dx);
    let mut ys = Vec::with_capacity(n * dy);
    for _ in 0..n {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let s = &l * z;
        xs.extend(s.iter().take(dx));
        ys.extend(s.iter().skip(dx));
    }
    let det = |m: DMatrix<f64>| m.determinant();
    let truth = -0.5
        * (det(cov.clone()) / (det(cov.view((0, 0), (dx, dx)).into_owned()) * det(cov.view((dx, dx), (dy, dy)).into_owned())))
            .log2();
    (
        SampleMatrix::new(n, dx, xs).unwrap(),
        SampleMatrix::new(n, dy, ys).unwrap(),
        truth,
    )
}

#[test]
fn gcmi_converges_on_multivariate_gaussians() {
    for (i, (dx, dy)) in [(1, 1), (2, 2), (1, 3), (4, 4)].into_iter().enumerate() {
        let (x, y, truth) = correlated_blocks(dx, dy, 10_000, 60 + i as u64);
        let est = gcmi(&x, &y).unwrap().bits;
        let tol = if dx + dy == 2 { 0.02 } else { 0.1 };
        assert!((est - truth).abs() < tol, "{dx}x{dy}: {est} vs {truth}");
    }
}

#[test]
fn copula_invariance_on_random_fixtures() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let rho = rng.random_range(-0.9..0.9);
        let (x, y) = gaussian_pair(500, rho, 800 + seed);
        let base = gcmi(&x, &y).unwrap().bits;
        let lo = x.column(0).iter().cloned().fold(f64::INFINITY, f64::min);
        let transforms: [Box<dyn Fn(f64) -> f64>; 3] = [
            Box::new(f64::exp),
            Box::new(move |v| (v - lo + 1.0).ln()),
            Box::new(|v| v * v * v),
        ];
        for f in &transforms {
            let tx = x.map_column(0, f);
            let ty = y.map_column(0, f);
            assert!((gcmi(&tx, &y).unwrap().bits - base).abs() <= 1e-12);
            assert!((gcmi(&x, &ty).unwrap().bits - base).abs() <= 1e-12);
        }
    }
}

#[test]
fn data_processing_holds_exactly_on_discrete_chains() {
    for seed in 0..50 {
        let (x, z, zp) = discrete_chain(seed);
        let ixz = plugin_discrete_mi(&x, &z).bits;
        let ixzp = plugin_discrete_mi(&x, &zp).bits;
        assert!(ixzp <= ixz, "seed {seed}: {ixzp} > {ixz}");
    }
}

#[test]
fn conditional_gcmi_on_markov_chain_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 5000;
    let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
    let (mut x, mut y, mut z) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let a = g();
        let b = 0.8 * a + 0.6 * g();
        let c = 0.7 * b + 0.7 * g();
        x.push(a);
        z.push(b);
        y.push(c.exp());
    }
    let m = |v: &Vec<f64>| SampleMatrix::from_column(v).unwrap();
    let v = conditional_gcmi(&m(&x), &m(&y), &m(&z)).unwrap().bits;
    assert!(v.abs() < 0.02, "{v}");
}

#[test]
fn kde_recovers_one_bit_for_separated_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 600;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let v: Vec<f64> = labels
        .iter()
        .flat_map(|&l| {
            let c = 50.0 * l as f64;
            [c + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
        })
        .collect();
    let t = SampleMatrix::new(n, 2, v).unwrap();
    let est = kde_mi_label(&labels, &t, &KdeConfig::default()).unwrap().bits;
    assert!((est - 1.0).abs() < 0.05, "{est}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plugin_symmetric_nonnegative_bounded(pairs in prop::collection::vec((0u8..6, 0u8..5), 1..200)) {
        let (x, y): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let a = plugin_discrete_mi(&x, &y).bits;
        let b = plugin_discrete_mi(&y, &x).bits;
        prop_assert_eq!(a, b);
        prop_assert!(a >= 0.0);
        let bound = plugin_entropy_bits(&x).min(plugin_entropy_bits(&y));
        prop_assert!(a <= bound + 1e-12);
    }

    #[test]
    fn binning_equals_plugin_on_small_alphabets(pairs in prop::collection::vec((0u8..4, 0u8..3), 2..150)) {
        let (x, y): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let col = |v: &[u8]| SampleMatrix::from_column(&v.iter().map(|&c| f64::from(c)).collect::<Vec<_>>()).unwrap();
        // Bins at least as many as the alphabet and aligned with the integers.
        let cfg = BinningConfig {
            bins_per_dim: 4,
            range: dynsplit::estimators::RangeRule::Fixed { lo: -0.5, hi: 3.5 },
        };
        let b = binning_mi(&col(&x), &col(&y), &cfg).unwrap().bits;
        prop_assert_eq!(b, plugin_discrete_mi(&x, &y).bits);
    }

    #[test]
    fn gcmi_invariant_under_monotone_maps(seed in 0u64..1000, scale in 0.1f64..5.0, shift in -3.0f64..3.0) {
        let (x, y) = gaussian_pair(200, 0.6, seed);
        let base = gcmi(&x, &y).unwrap().bits;
        let tx = x.map_column(0, |v| (scale * v + shift).tanh() + 1e-3 * v);
        prop_assert!((gcmi(&tx, &y).unwrap().bits - base).abs() <= 1e-12);
    }
}
