use crate::error::{Error, Result};

fn check_scores(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::input(format!("{what} list is empty")));
    }
    if let Some(v) = values.iter().find(|v| v.is_nan()) {
        return Err(Error::input(format!("{what} list contains {v}")));
    }
    Ok(())
}

/// Area under the ROC curve with outliers as the positive class.
///
/// Rank-sum form of the Mann-Whitney statistic with average ranks for ties,
/// so it equals `(#{out > in} + 0.5·#{out == in}) / (n_out·n_in)` exactly.
pub fn auroc(inlier_scores: &[f64], outlier_scores: &[f64]) -> Result<f64> {
    check_scores(inlier_scores, "inlier score")?;
    check_scores(outlier_scores, "outlier score")?;
    let mut pooled: Vec<(f64, bool)> = inlier_scores
        .iter()
        .map(|&s| (s, false))
        .chain(outlier_scores.iter().map(|&s| (s, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the outlier rank sum, kept integral: a tie group occupying
    // 1-based ranks lo..=hi contributes (lo + hi) per member.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        // -0.0 and 0.0 compare unequal under total_cmp but tie as scores
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let outliers = pooled[i..j].iter().filter(|p| p.1).count() as u128;
        twice_rank_sum += outliers * ((i + 1) + j) as u128;
        i = j;
    }
    let n_out = outlier_scores.len() as u128;
    let n_in = inlier_scores.len() as u128;
    // twice the count of (outlier > inlier) pairs plus ties
    let twice_u = twice_rank_sum - n_out * (n_out + 1);
    Ok(twice_u as f64 / 2.0 / (n_out * n_in) as f64)
}

/// Inlier/outlier counts over shared equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub inlier_counts: Vec<usize>,
    pub outlier_counts: Vec<usize>,
    /// Percentage of all samples lying in bins occupied by both classes.
    pub overlap_percent: f64,
}

impl Histogram {
    pub fn bin_count(&self) -> usize {
        self.inlier_counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.bin_count() as f64
    }
}

pub fn histogram(inlier_values: &[f64], outlier_values: &[f64], bin_count: usize) -> Result<Histogram> {
    if bin_count < 2 {
        return Err(Error::input(format!("bin_count must be at least 2, got {bin_count}")));
    }
    for (vals, what) in [(inlier_values, "inlier value"), (outlier_values, "outlier value")] {
        check_scores(vals, what)?;
        if vals.iter().any(|v| v.is_infinite()) {
            return Err(Error::input(format!("{what} list contains an infinity")));
        }
    }
    let all = inlier_values.iter().chain(outlier_values);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let bin = |v: f64| {
        if hi > lo {
            (((v - lo) / (hi - lo) * bin_count as f64) as usize).min(bin_count - 1)
        } else {
            0
        }
    };
    let mut inlier_counts = vec![0usize; bin_count];
    let mut outlier_counts = vec![0usize; bin_count];
    inlier_values.iter().for_each(|&v| inlier_counts[bin(v)] += 1);
    outlier_values.iter().for_each(|&v| outlier_counts[bin(v)] += 1);
    let shared: usize = inlier_counts
        .iter()
        .zip(&outlier_counts)
        .filter(|(a, b)| **a > 0 && **b > 0)
        .map(|(a, b)| a + b)
        .sum();
    let total = inlier_values.len() + outlier_values.len();
    Ok(Histogram {
        lo,
        hi,
        inlier_counts,
        outlier_counts,
        overlap_percent: 100.0 * shared as f64 / total as f64,
    })
}

/// Overlap percentage of [`histogram`].
pub fn histogram_overlap(inlier_values: &[f64], outlier_values: &[f64], bin_count: usize) -> Result<f64> {
    Ok(histogram(inlier_values, outlier_values, bin_count)?.overlap_percent)
}

/// Arithmetic mean and population variance.
pub fn mean_variance(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(inl: &[f64], out: &[f64]) -> f64 {
        let mut twice = 0u64;
        for o in out {
            for i in inl {
                twice += if o > i { 2 } else if o == i { 1 } else { 0 };
            }
        }
        twice as f64 / 2.0 / (out.len() * inl.len()) as f64
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.4; 5], &[0.4; 3]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.3, 0.6], &[0.5, 0.7]).unwrap(), brute_force(&[0.3, 0.6], &[0.5, 0.7]));
        assert_eq!(auroc(&[0.3, 0.6], &[0.5, 0.7]).unwrap(), 0.75);
    }

    #[test]
    fn auroc_rejects_empty_and_nan() {
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn signed_zeros_tie() {
        assert_eq!(auroc(&[-0.0], &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn overlap_examples() {
        let a: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 10.0).collect();
        assert_eq!(histogram_overlap(&a, &b, 50).unwrap(), 0.0);
        assert_eq!(histogram_overlap(&a, &a, 50).unwrap(), 100.0);
        let v = histogram_overlap(&[1.0, 1.0, 2.0], &[2.0, 3.0, 3.0], 3).unwrap();
        assert!((v - 100.0 * 2.0 / 6.0).abs() < 1e-12);
        assert!(histogram_overlap(&[1.0], &[2.0], 1).is_err());
        assert!(histogram_overlap(&[], &[2.0], 10).is_err());
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        // small integer grid so ties are common
        prop::collection::vec(prop_oneof![(0i32..20).prop_map(|v| v as f64), -1e3f64..1e3], 1..200)
    }

    proptest! {
        #[test]
        fn auroc_matches_brute_force(a in scores(), b in scores()) {
            prop_assert_eq!(auroc(&a, &b).unwrap(), brute_force(&a, &b));
        }

        #[test]
        fn auroc_antisymmetric(a in scores(), b in scores()) {
            let s = auroc(&a, &b).unwrap() + auroc(&b, &a).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auroc_invariant_under_monotone_maps(a in scores(), b in scores()) {
            let f = |v: &f64| v * v.abs() + v + 7.0;
            let fa: Vec<f64> = a.iter().map(f).collect();
            let fb: Vec<f64> = b.iter().map(f).collect();
            prop_assert_eq!(auroc(&a, &b).unwrap(), auroc(&fa, &fb).unwrap());
        }

        #[test]
        fn overlap_invariant_under_affine_rescaling(
            a in prop::collection::vec(0u32..4096, 1..100),
            b in prop::collection::vec(0u32..4096, 1..100),
            scale in 1usize..6,
            shift in -8i32..8,
        ) {
            // dyadic values, power-of-two scales and integer shifts keep the
            // bin arithmetic exact
            let a: Vec<f64> = a.iter().map(|&v| v as f64 / 4096.0).collect();
            let b: Vec<f64> = b.iter().map(|&v| v as f64 / 4096.0).collect();
            let s = (1u32 << scale) as f64;
            let g = |v: &f64| v * s + shift as f64;
            let ga: Vec<f64> = a.iter().map(g).collect();
            let gb: Vec<f64> = b.iter().map(g).collect();
            prop_assert_eq!(histogram_overlap(&a, &b, 20).unwrap(), histogram_overlap(&ga, &gb, 20).unwrap());
        }
    }
}
