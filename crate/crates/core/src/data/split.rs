use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SequenceWindow;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Contiguous-in-time split. Each run contributes its final windows to the
/// test set (the total is `round(fraction * N)`, apportioned across runs by
/// largest remainder, ties broken by a seeded shuffle). Training windows
/// whose source rows overlap a test window of the same run are dropped.
pub fn split(windows: &[SequenceWindow], cfg: &SplitConfig) -> Result<(Vec<SequenceWindow>, Vec<SequenceWindow>)> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must be in (0, 1), got {}",
            cfg.test_fraction
        )));
    }
    // Run order = first appearance; windows within a run ordered by start row.
    let mut order: Vec<&str> = Vec::new();
    let mut by_run: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        by_run
            .entry(w.run.as_str())
            .or_insert_with(|| {
                order.push(w.run.as_str());
                Vec::new()
            })
            .push(i);
    }
    for idx in by_run.values_mut() {
        idx.sort_by_key(|&i| windows[i].start_row);
    }

    let total = windows.len();
    let target = (cfg.test_fraction * total as f64).round() as usize;
    let mut alloc: Vec<(usize, f64)> = order
        .iter()
        .map(|r| {
            let exact = cfg.test_fraction * by_run[r].len() as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut remaining = target.saturating_sub(alloc.iter().map(|a| a.0).sum());
    let mut ranks: Vec<usize> = (0..order.len()).collect();
    ranks.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    ranks.sort_by(|&a, &b| alloc[b].1.total_cmp(&alloc[a].1));
    for &r in &ranks {
        if remaining == 0 {
            break;
        }
        if alloc[r].0 < by_run[order[r]].len() {
            alloc[r].0 += 1;
            remaining -= 1;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (r, run) in order.iter().enumerate() {
        let idx = &by_run[run];
        let n_test = alloc[r].0;
        let cut = idx.len() - n_test;
        let test_start = idx[cut..].iter().map(|&i| windows[i].start_row).min();
        for &i in &idx[..cut] {
            let w = &windows[i];
            if test_start.is_none_or(|s| w.source_rows().end <= s) {
                train.push(w.clone());
            }
        }
        test.extend(idx[cut..].iter().map(|&i| windows[i].clone()));
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientSamples {
            context: "train/test split".into(),
            required: 2,
            got: total,
        });
    }
    Ok((train, test))
}
