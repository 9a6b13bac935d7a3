//! Train / validation / test-id / test-ood index splits.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    None,
    Size {
        train_quantile: f64,
        eval_quantile: f64,
    },
    Covariate {
        held_out: Vec<String>,
    },
    Concept {
        rho: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test_id: Vec<usize>,
    pub test_ood: Vec<usize>,
    pub kind: SplitKind,
}

impl DatasetSplit {
    /// Checks that the four index lists are pairwise disjoint and within
    /// `store_len`.
    pub fn check(&self, store_len: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, part) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test_id", &self.test_id),
            ("test_ood", &self.test_ood),
        ] {
            for &i in part {
                if i >= store_len {
                    return Err(Error::Split(format!(
                        "{name} index {i} outside store of {store_len}"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Split(format!("index {i} appears in more than one split ({name})")));
                }
            }
        }
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data (the "type 7" estimator).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Size-quantile split over raw sizes.
///
/// Graphs with size `<= q(train_quantile)` form the train pool, those with
/// size `>= q(eval_quantile)` form test-ood, and the rest are test-id. A
/// size-stratified `val_fraction` of the train pool becomes validation.
pub fn size_quantile_split_sizes(
    sizes: &[usize],
    train_quantile: f64,
    eval_quantile: f64,
    val_fraction: f64,
    rng: &mut RngStream,
) -> Result<DatasetSplit> {
    if sizes.len() < 10 {
        return Err(Error::Split(format!(
            "size split needs at least 10 graphs, got {}",
            sizes.len()
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) || !(train_quantile < eval_quantile) {
        return Err(Error::Split(format!(
            "bad split parameters: train_quantile={train_quantile} eval_quantile={eval_quantile} val_fraction={val_fraction}"
        )));
    }
    let mut sorted: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let train_cut = quantile_sorted(&sorted, train_quantile);
    let eval_cut = quantile_sorted(&sorted, eval_quantile);
    if eval_cut <= train_cut {
        return Err(Error::Split(format!(
            "degenerate size distribution (quantiles {train_cut} and {eval_cut} coincide); \
             use a dataset with varied graph sizes, e.g. the synthetic motif generator"
        )));
    }
    let mut pool = Vec::new();
    let mut test_id = Vec::new();
    let mut test_ood = Vec::new();
    for (i, &s) in sizes.iter().enumerate() {
        let s = s as f64;
        if s <= train_cut {
            pool.push(i);
        } else if s >= eval_cut {
            test_ood.push(i);
        } else {
            test_id.push(i);
        }
    }
    let (train, val) = stratified_holdout(&pool, |i| sizes[i], val_fraction, rng);
    Ok(DatasetSplit {
        train,
        val,
        test_id,
        test_ood,
        kind: SplitKind::Size {
            train_quantile,
            eval_quantile,
        },
    })
}

pub fn size_quantile_split(
    graphs: &[Graph],
    train_quantile: f64,
    eval_quantile: f64,
    val_fraction: f64,
    rng: &mut RngStream,
) -> Result<DatasetSplit> {
    let sizes: Vec<usize> = graphs.iter().map(Graph::num_nodes).collect();
    size_quantile_split_sizes(&sizes, train_quantile, eval_quantile, val_fraction, rng)
}

/// Holds out `round(fraction * len)` items, one drawn uniformly from each of
/// that many contiguous strata of the pool sorted by `key`.
pub fn stratified_holdout(
    pool: &[usize],
    key: impl Fn(usize) -> usize,
    fraction: f64,
    rng: &mut RngStream,
) -> (Vec<usize>, Vec<usize>) {
    let n_hold = (fraction * pool.len() as f64).round() as usize;
    if n_hold == 0 {
        return (pool.to_vec(), Vec::new());
    }
    let mut sorted = pool.to_vec();
    sorted.sort_by_key(|&i| (key(i), i));
    let mut held = HashSet::new();
    for s in 0..n_hold {
        let lo = s * sorted.len() / n_hold;
        let hi = (s + 1) * sorted.len() / n_hold;
        held.insert(sorted[lo + rng.index(hi - lo)]);
    }
    let keep = pool.iter().copied().filter(|i| !held.contains(i)).collect();
    let mut val: Vec<usize> = held.into_iter().collect();
    val.sort_unstable();
    (keep, val)
}

/// Shift-free split: a random 60 / `val_fraction` / 15 partition with the
/// remainder as a second, identically distributed "ood" set.
pub fn random_split(n: usize, val_fraction: f64, rng: &mut RngStream) -> Result<DatasetSplit> {
    if n < 10 || !(0.0..0.25).contains(&val_fraction) {
        return Err(Error::Split(format!(
            "random split needs >= 10 graphs and val_fraction in [0, 0.25), got n={n}, val_fraction={val_fraction}"
        )));
    }
    let perm = rng.permutation(n);
    let cut = |f: f64| (f * n as f64).round() as usize;
    let (a, b, c) = (cut(0.6), cut(0.6 + val_fraction), cut(0.75 + val_fraction));
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(DatasetSplit {
        train: sorted(&perm[..a]),
        val: sorted(&perm[a..b]),
        test_id: sorted(&perm[b..c]),
        test_ood: sorted(&perm[c..]),
        kind: SplitKind::None,
    })
}
