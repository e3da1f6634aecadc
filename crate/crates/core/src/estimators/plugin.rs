//! Exact plug-in mutual information of an empirical joint distribution.
//!
//! `n * I(X;Y) = ln R` with the integer ratio
//! `R = n^n * prod c_xy^c_xy / (prod c_x^c_x * prod c_y^c_y)`. `R` is kept as
//! a vector of prime exponents, so two tables whose true MI coincides produce
//! identical exponent vectors and therefore bit-identical estimates, and an
//! independent table (`R = 1`) gives exactly zero.

use std::collections::BTreeMap;

use super::{EstimateConfig, EstimatorKind, MIEstimate};

/// Smallest-prime-factor table for `0..=n`.
fn spf_table(n: usize) -> Vec<usize> {
    let mut spf = vec![0usize; n + 1];
    for i in 2..=n {
        if spf[i] == 0 {
            let mut j = i;
            while j <= n {
                if spf[j] == 0 {
                    spf[j] = i;
                }
                j += i;
            }
        }
    }
    spf
}

struct PrimeLog {
    spf: Vec<usize>,
    exps: BTreeMap<usize, i64>,
}

impl PrimeLog {
    fn new(n: usize) -> Self {
        PrimeLog {
            spf: spf_table(n.max(2)),
            exps: BTreeMap::new(),
        }
    }

    /// Adds `sign * c * ln c` to the accumulated logarithm.
    fn add_c_log_c(&mut self, c: u64, sign: i64) {
        let mut m = c as usize;
        while m > 1 {
            let p = self.spf[m];
            *self.exps.entry(p).or_insert(0) += sign * c as i64;
            m /= p;
        }
    }

    fn ln(&self) -> f64 {
        self.exps
            .iter()
            .filter(|(_, &e)| e != 0)
            .map(|(&p, &e)| e as f64 * (p as f64).ln())
            .sum()
    }
}

fn counts<T: Ord>(xs: &[T]) -> BTreeMap<&T, u64> {
    let mut m = BTreeMap::new();
    for x in xs {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

/// Plug-in MI in bits between two equally long symbol sequences.
pub fn plugin_mi_symbols<A: Ord, B: Ord>(x: &[A], y: &[B]) -> f64 {
    assert_eq!(x.len(), y.len(), "plug-in MI needs paired samples");
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let joint: BTreeMap<(&A, &B), u64> = {
        let mut m = BTreeMap::new();
        for (a, b) in x.iter().zip(y) {
            *m.entry((a, b)).or_insert(0) += 1;
        }
        m
    };
    let mut acc = PrimeLog::new(n);
    acc.add_c_log_c(n as u64, 1);
    for &c in joint.values() {
        acc.add_c_log_c(c, 1);
    }
    for &c in counts(x).values() {
        acc.add_c_log_c(c, -1);
    }
    for &c in counts(y).values() {
        acc.add_c_log_c(c, -1);
    }
    acc.ln() / (n as f64 * std::f64::consts::LN_2)
}

/// Plug-in entropy in bits.
pub fn plugin_entropy_bits<T: Ord>(x: &[T]) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let mut acc = PrimeLog::new(n);
    acc.add_c_log_c(n as u64, 1);
    for &c in counts(x).values() {
        acc.add_c_log_c(c, -1);
    }
    acc.ln() / (n as f64 * std::f64::consts::LN_2)
}

/// Exact plug-in MI of two discrete sequences.
pub fn plugin_discrete_mi<A: Ord, B: Ord>(x: &[A], y: &[B]) -> MIEstimate {
    MIEstimate {
        bits: plugin_mi_symbols(x, y),
        estimator: EstimatorKind::Plugin,
        config: EstimateConfig {
            samples: x.len(),
            ..Default::default()
        },
    }
}
