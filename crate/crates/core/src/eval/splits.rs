use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Stratified k-fold layout. Each class is shuffled once and cut into
/// `fold_count` contiguous blocks; fold `k` tests on block `k`, validates on
/// block `k + 1` and trains on the rest (60/20/20 for five folds).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub fold_count: usize,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { fold_count: 5, seed: 0 }
    }
}

impl SplitSpec {
    pub fn train_fraction(&self) -> f64 {
        (self.fold_count as f64 - 2.0) / self.fold_count as f64
    }

    pub fn holdout_fraction(&self) -> f64 {
        1.0 / self.fold_count as f64
    }
}

/// Sample indices of one fold, each list sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn make_splits(labels: &[u8], spec: SplitSpec) -> Result<Vec<FoldSplit>> {
    let k = spec.fold_count;
    if k < 3 {
        return Err(Error::input(format!("fold_count must be at least 3, got {k}")));
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if by_class.is_empty() {
        return Err(Error::input("cannot split an empty dataset"));
    }
    let mut folds = vec![FoldSplit::default(); k];
    let root = SeededRng::new(spec.seed).derive_named("splits");
    for (&class, members) in &by_class {
        let n = members.len();
        if n < k {
            return Err(Error::input(format!("class {class} has {n} samples, fewer than {k} folds")));
        }
        let mut order = members.clone();
        root.derive(class as u64).shuffle(&mut order);
        // rounded cut points keep every part within one sample of its share
        let cut: Vec<usize> = (0..=k).map(|b| ((b * n) as f64 / k as f64).round() as usize).collect();
        let block = |b: usize| &order[cut[b]..cut[b + 1]];
        for (f, fold) in folds.iter_mut().enumerate() {
            let v = (f + 1) % k;
            fold.test.extend_from_slice(block(f));
            fold.validation.extend_from_slice(block(v));
            for b in (0..k).filter(|&b| b != f && b != v) {
                fold.train.extend_from_slice(block(b));
            }
        }
    }
    for fold in &mut folds {
        fold.train.sort_unstable();
        fold.validation.sort_unstable();
        fold.test.sort_unstable();
    }
    Ok(folds)
}
