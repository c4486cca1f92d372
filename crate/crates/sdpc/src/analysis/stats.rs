//! Robust statistics: median, median absolute deviation and the Wilcoxon
//! signed-rank test (normal approximation, Pratt handling of zero
//! differences, tie-corrected variance, two-sided p).

use crate::error::{Result, SdpcError};

/// Median, MAD and, for paired tests, the signed-rank statistic and p-value.
#[derive(Debug, Clone, PartialEq)]
pub struct StatSummary {
    pub median: f64,
    pub mad: f64,
    pub n: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    /// Set when every paired difference was exactly zero.
    pub all_zero: bool,
}

/// Median of a sample; the average of the two central order statistics for
/// even sizes. Empty input yields NaN.
pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in samples"));
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Median and median absolute deviation.
pub fn median_mad(samples: &[f64]) -> StatSummary {
    let med = median(samples);
    let deviations: Vec<f64> = samples.iter().map(|x| (x - med).abs()).collect();
    StatSummary {
        median: med,
        mad: median(&deviations),
        n: samples.len(),
        statistic: None,
        p_value: None,
        all_zero: false,
    }
}

/// Complementary error function (fractional error below 1.2e-7).
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Upper tail of the standard normal.
fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Paired two-sided Wilcoxon signed-rank test.
///
/// Requires equal lengths and at least 6 pairs. Zero differences keep their
/// ranks but drop out of the statistic (Pratt); rank ties share the average
/// rank and shrink the null variance accordingly. The returned summary also
/// carries the median and MAD of the differences.
pub fn wilcoxon(paired_a: &[f64], paired_b: &[f64]) -> Result<StatSummary> {
    if paired_a.len() != paired_b.len() {
        return Err(SdpcError::Analysis(format!(
            "paired samples differ in length: {} vs {}",
            paired_a.len(),
            paired_b.len()
        )));
    }
    let n = paired_a.len();
    if n < 6 {
        return Err(SdpcError::Analysis(format!(
            "signed-rank test needs at least 6 pairs, got {n}"
        )));
    }
    let diffs: Vec<f64> = paired_a.iter().zip(paired_b).map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(SdpcError::Analysis("non-finite paired differences".into()));
    }
    let base = median_mad(&diffs);

    let zeros = diffs.iter().filter(|d| **d == 0.0).count();
    if zeros == n {
        return Ok(StatSummary {
            statistic: Some(0.0),
            p_value: Some(1.0),
            all_zero: true,
            ..base
        });
    }

    // average ranks of |d| over the full sample, zeros included
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut ranks = vec![0.0f64; n];
    let mut tie_correction = 0.0f64;
    let mut idx = 0;
    while idx < n {
        let mut end = idx + 1;
        while end < n && diffs[order[end]].abs() == diffs[order[idx]].abs() {
            end += 1;
        }
        let tied = (end - idx) as f64;
        let avg_rank = (idx + 1 + end) as f64 / 2.0;
        for &sample in &order[idx..end] {
            ranks[sample] = avg_rank;
        }
        if diffs[order[idx]] != 0.0 {
            tie_correction += tied.powi(3) - tied;
        }
        idx = end;
    }

    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();

    let nf = n as f64;
    let zf = zeros as f64;
    let mean = (nf * (nf + 1.0) - zf * (zf + 1.0)) / 4.0;
    let variance = (nf * (nf + 1.0) * (2.0 * nf + 1.0) - zf * (zf + 1.0) * (2.0 * zf + 1.0)) / 24.0
        - tie_correction / 48.0;
    if variance <= 0.0 {
        return Ok(StatSummary {
            statistic: Some(w_plus),
            p_value: Some(1.0),
            all_zero: false,
            ..base
        });
    }
    let offset = w_plus - mean;
    let corrected = offset.abs() - 0.5;
    let z = if corrected > 0.0 {
        corrected / variance.sqrt()
    } else {
        0.0
    };
    let p = (2.0 * normal_sf(z)).clamp(0.0, 1.0);

    Ok(StatSummary {
        statistic: Some(w_plus),
        p_value: Some(p),
        all_zero: false,
        ..base
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn median_mad_hand_case() {
        let s = median_mad(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.mad, 1.0);
        assert_eq!(s.n, 5);
    }

    #[test]
    fn median_of_even_sample_averages() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn identical_pairs_give_p_one_with_flag() {
        let a = vec![0.4; 10];
        let s = wilcoxon(&a, &a).unwrap();
        assert_eq!(s.p_value, Some(1.0));
        assert!(s.all_zero);
    }

    #[test]
    fn shifted_sample_is_detected() {
        // constant shift of 1 with noise of std 0.1: overwhelming evidence
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let b: Vec<f64> = (0..50).map(|_| rng.random_range(-0.5..0.5)).collect();
        let a: Vec<f64> = b
            .iter()
            .map(|v| v + 1.0 + 0.1 * rng.random_range(-1.0..1.0f64))
            .collect();
        let s = wilcoxon(&a, &b).unwrap();
        assert!(s.p_value.unwrap() < 0.01, "p = {:?}", s.p_value);
        assert!(s.median > 0.9);
    }

    #[test]
    fn swap_preserves_p_value() {
        let a = vec![1.0, 2.0, 3.5, 2.2, 0.5, 4.0, 1.1, 2.8];
        let b = vec![0.9, 2.5, 3.0, 2.9, 0.7, 3.1, 1.6, 2.0];
        let s1 = wilcoxon(&a, &b).unwrap();
        let s2 = wilcoxon(&b, &a).unwrap();
        assert!((s1.p_value.unwrap() - s2.p_value.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn needs_six_pairs() {
        let a = vec![1.0; 5];
        assert!(wilcoxon(&a, &a).is_err());
    }

    #[test]
    fn mixed_zero_differences_use_pratt_ranks() {
        // half the pairs agree exactly; the rest shift up
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let b = vec![1.0, 2.0, 3.0, 4.0, 4.0, 5.0, 6.0, 7.0];
        let s = wilcoxon(&a, &b).unwrap();
        let p = s.p_value.unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert!(!s.all_zero);
        // W+ collects the four top ranks (5+6+7+8)
        assert_eq!(s.statistic, Some(26.0));
    }
}
