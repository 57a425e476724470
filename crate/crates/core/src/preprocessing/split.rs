use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

pub const VALIDATION_FRACTION: f64 = 0.25;

/// Sample indices of one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub split_index: usize,
    pub held_out_run: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Run index reserved for testing: split 1 holds out run 3, split 2 run 1,
/// split 3 run 2.
pub fn held_out_run(split_index: usize) -> Result<usize> {
    match split_index {
        1 => Ok(3),
        2 => Ok(1),
        3 => Ok(2),
        other => Err(Error::Config(format!("split index {other} outside 1..=3"))),
    }
}

/// Run-based split: per (test series, class) two runs feed training and
/// validation, the held-out run feeds the test set. A quarter of the
/// training samples of every class moves to validation, spread over test
/// series in proportion to their size.
pub fn assign_splits(dataset: &Dataset, split_index: usize, seed: u64) -> Result<SplitAssignment> {
    let held_out = held_out_run(split_index)?;
    let mut groups: BTreeMap<(usize, usize), BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        let p = s.provenance;
        groups
            .entry((p.test_series, p.damage_class))
            .or_default()
            .entry(p.run_index)
            .or_default()
            .push(i);
    }
    if groups.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let mut test = Vec::new();
    // class -> test series -> candidate training samples
    let mut pool: BTreeMap<usize, BTreeMap<usize, Vec<usize>>> = BTreeMap::new();
    for (&(ts, class), runs) in &groups {
        for r in 1..=3 {
            if !runs.contains_key(&r) {
                return Err(Error::Data(format!(
                    "test series {ts}, class {class}: run {r} missing"
                )));
            }
        }
        for (&r, idx) in runs {
            if r == held_out {
                test.extend_from_slice(idx);
            } else {
                pool.entry(class)
                    .or_default()
                    .entry(ts)
                    .or_default()
                    .extend_from_slice(idx);
            }
        }
    }

    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (split_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for by_series in pool.values() {
        let total: usize = by_series.values().map(Vec::len).sum();
        let want = (VALIDATION_FRACTION * total as f64).round() as usize;
        let quotas = apportion(by_series.values().map(Vec::len).collect(), want, &mut rng);
        for (members, quota) in by_series.values().zip(quotas) {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            validation.extend_from_slice(&shuffled[..quota]);
            train.extend_from_slice(&shuffled[quota..]);
        }
    }
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitAssignment {
        split_index,
        held_out_run: held_out,
        train,
        validation,
        test,
    })
}

/// Largest-remainder apportionment of `want` items over groups of `sizes`;
/// ties in the remainder are broken randomly.
fn apportion<R: Rng>(sizes: Vec<usize>, want: usize, rng: &mut R) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| want as f64 * s as f64 / total as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = want - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(rng);
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
    });
    for &g in &order {
        if left == 0 {
            break;
        }
        if quota[g] < sizes[g] {
            quota[g] += 1;
            left -= 1;
        }
    }
    quota
}
