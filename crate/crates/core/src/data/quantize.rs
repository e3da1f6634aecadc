use crate::error::{Error, Result};

/// Thresholds at the empirical `k/K` quantiles (`k = 1..K-1`), using the
/// lower order statistic `sorted[ceil(p n) - 1]`.
pub fn fit_quantile_thresholds(values: &[f64], classes: usize) -> Result<Vec<f64>> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if values.is_empty() {
        return Err(Error::InsufficientSamples {
            context: "quantile thresholds".into(),
            required: 1,
            got: 0,
        });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok((1..classes)
        .map(|k| {
            let pos = (k as f64 * n as f64 / classes as f64).ceil() as usize;
            sorted[pos.clamp(1, n) - 1]
        })
        .collect())
}

/// Label = number of thresholds strictly below the value, so a value equal
/// to a threshold falls into the lower bin.
pub fn quantize_with(values: &[f64], thresholds: &[f64]) -> Vec<usize> {
    values
        .iter()
        .map(|&v| thresholds.iter().filter(|&&q| v > q).count())
        .collect()
}

/// Quantile-binned classes `0..K-1` fitted on `values` themselves.
pub fn quantize_throughput(values: &[f64], classes: usize) -> Result<Vec<usize>> {
    let thresholds = fit_quantile_thresholds(values, classes)?;
    Ok(quantize_with(values, &thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_split() {
        assert_eq!(quantize_throughput(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![0, 0, 1, 1]);
    }

    #[test]
    fn all_equal_is_label_zero() {
        assert_eq!(quantize_throughput(&[7.5; 9], 4).unwrap(), vec![0; 9]);
    }

    #[test]
    fn uniform_quartiles_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let labels = quantize_throughput(&v, 4).unwrap();
        for k in 0..4 {
            let f = labels.iter().filter(|&&l| l == k).count() as f64 / 1e4;
            assert!((f - 0.25).abs() <= 0.02, "class {k}: {f}");
        }
    }

    #[test]
    fn rejects_single_class() {
        assert!(quantize_throughput(&[1.0], 1).is_err());
    }
}
