#![allow(dead_code)]

use dynsplit::cascade::Mode;
use dynsplit::estimators::SampleMatrix;
use dynsplit::nn::{Activation, Batch, DenseLayer, LstmLayer, Parameter, SplitNetwork, Tensor, TimeDistributed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-6;

/// `||a - n|| / max(||a||, ||n||)` with a floor for all-zero gradients.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-10)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` over every entry of the parameter chosen by `pick`.
fn numeric_param<M>(model: &mut M, pick: fn(&mut M, usize) -> &mut Parameter, idx: usize, f: &dyn Fn(&M) -> f64) -> Vec<f64> {
    let len = pick(model, idx).len();
    (0..len)
        .map(|i| {
            let orig = pick(model, idx).tensor.values()[i];
            pick(model, idx).tensor.values_mut()[i] = orig + STEP;
            let up = f(model);
            pick(model, idx).tensor.values_mut()[i] = orig - STEP;
            let down = f(model);
            pick(model, idx).tensor.values_mut()[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn numeric_input(x: &Tensor, f: &dyn Fn(&Tensor) -> f64) -> Vec<f64> {
    let mut x = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = x.values()[i];
            x.values_mut()[i] = orig + STEP;
            let up = f(&x);
            x.values_mut()[i] = orig - STEP;
            let down = f(&x);
            x.values_mut()[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Worst relative error over parameters and input of a dense layer.
pub fn dense_check(seed: u64, activation: Activation) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, inp, out) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(2..6));
    let mut layer = DenseLayer::new(inp, out, activation, &mut rng);
    let x = random_tensor(&[rows, inp], &mut rng);
    let r = random_tensor(&[rows, out], &mut rng);
    let cache = layer.forward_train(&x).unwrap();
    let dx = layer.backward(&cache, &r);
    let f = |l: &DenseLayer| dot(&l.forward(&x).unwrap(), &r);
    let pick: fn(&mut DenseLayer, usize) -> &mut Parameter = |l, i| if i == 0 { &mut l.weights } else { &mut l.bias };
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let analytic = pick(&mut layer, i).gradient.values().to_vec();
        worst = worst.max(rel_err(&analytic, &numeric_param(&mut layer, pick, i, &f)));
    }
    let fx = |x: &Tensor| dot(&layer.forward(x).unwrap(), &r);
    worst.max(rel_err(dx.values(), &numeric_input(&x, &fx)))
}

/// Worst relative error for a time-distributed dense layer on `[T, B, in]`.
pub fn time_distributed_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, b, inp, out) = (
        rng.random_range(1..5),
        rng.random_range(1..4),
        rng.random_range(1..5),
        rng.random_range(1..5),
    );
    let mut layer = TimeDistributed::new(DenseLayer::new(inp, out, Activation::Tanh, &mut rng));
    let x = random_tensor(&[t, b, inp], &mut rng);
    let r = random_tensor(&[t, b, out], &mut rng);
    let cache = layer.forward_train(&x).unwrap();
    let dx = layer.backward(&cache, &r);
    let f = |l: &TimeDistributed| dot(&l.forward(&x).unwrap(), &r);
    let pick: fn(&mut TimeDistributed, usize) -> &mut Parameter =
        |l, i| if i == 0 { &mut l.layer.weights } else { &mut l.layer.bias };
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let analytic = pick(&mut layer, i).gradient.values().to_vec();
        worst = worst.max(rel_err(&analytic, &numeric_param(&mut layer, pick, i, &f)));
    }
    let fx = |x: &Tensor| dot(&layer.forward(x).unwrap(), &r);
    worst.max(rel_err(dx.values(), &numeric_input(&x, &fx)))
}

/// Worst relative error for backpropagation through time in one LSTM layer.
pub fn lstm_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, b, inp, cells) = (
        rng.random_range(1..6),
        rng.random_range(1..4),
        rng.random_range(1..5),
        rng.random_range(1..5),
    );
    let mut layer = LstmLayer::new(inp, cells, &mut rng);
    let x = random_tensor(&[t, b, inp], &mut rng);
    let r = random_tensor(&[t, b, cells], &mut rng);
    let cache = layer.forward_train(&x).unwrap();
    let dx = layer.backward(&cache, &r, true).unwrap();
    let f = |l: &LstmLayer| dot(&l.forward(&x).unwrap().hidden, &r);
    let pick: fn(&mut LstmLayer, usize) -> &mut Parameter = |l, i| match i {
        0 => &mut l.input_weights,
        1 => &mut l.recurrent_weights,
        _ => &mut l.bias,
    };
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        let analytic = pick(&mut layer, i).gradient.values().to_vec();
        worst = worst.max(rel_err(&analytic, &numeric_param(&mut layer, pick, i, &f)));
    }
    let fx = |x: &Tensor| dot(&layer.forward(x).unwrap().hidden, &r);
    worst.max(rel_err(dx.values(), &numeric_input(&x, &fx)))
}

/// Small random batch with labels for whole-network checks.
pub fn tiny_batch(rng: &mut ChaCha8Rng, t: usize, b: usize, d: usize, k: usize) -> Batch {
    Batch {
        inputs: random_tensor(&[t, b, d], rng),
        targets: (0..t * b).map(|_| rng.random_range(0..k)).collect(),
    }
}

/// Cross-entropy gradient check of the whole split network in `mode`, over
/// every trainable parameter.
pub fn network_check(net: &mut SplitNetwork, batch: &Batch, mode: Mode) -> f64 {
    net.zero_grad();
    let pass = net.forward_train(batch, mode).unwrap();
    net.backward(&pass, &batch.targets).unwrap();
    let f = |n: &SplitNetwork| SplitNetwork::loss(&n.forward(&batch.inputs, mode).unwrap(), &batch.targets);
    let pick: fn(&mut SplitNetwork, usize) -> &mut Parameter = |n, i| n.params_mut().into_iter().nth(i).unwrap();
    let count = net.params().len();
    let mut worst: f64 = 0.0;
    for i in 0..count {
        if net.params()[i].frozen {
            continue;
        }
        let analytic = net.params()[i].gradient.values().to_vec();
        worst = worst.max(rel_err(&analytic, &numeric_param(net, pick, i, &f)));
    }
    worst
}

pub fn gaussian_pair(n: usize, rho: f64, seed: u64) -> (SampleMatrix, SampleMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        x.push(a);
        y.push(rho * a + (1.0 - rho * rho).sqrt() * e);
    }
    (SampleMatrix::from_column(&x).unwrap(), SampleMatrix::from_column(&y).unwrap())
}

pub fn gaussian_mi_closed_form(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).log2()
}

/// Random discrete chain `X -> Z -> Z' = f(Z)` with small alphabets.
pub fn discrete_chain(seed: u64) -> (Vec<u32>, Vec<u32>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ax, az, azp) = (rng.random_range(2..6u32), rng.random_range(2..8u32), rng.random_range(1..5u32));
    let n = rng.random_range(20..400);
    let map: Vec<u32> = (0..az).map(|_| rng.random_range(0..azp)).collect();
    let noise = rng.random_range(0.0..1.0);
    let mut xs = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random_range(0..ax);
        let z = if rng.random_bool(noise) { rng.random_range(0..az) } else { x % az };
        xs.push(x);
        zs.push(z);
    }
    let zp = zs.iter().map(|&z| map[z as usize]).collect();
    (xs, zs, zp)
}
