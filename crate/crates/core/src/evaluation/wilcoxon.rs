//! Two-sided Wilcoxon signed-rank test for paired samples.
//!
//! Zero differences are dropped before ranking and tied absolute
//! differences share their average rank. Up to [`EXACT_MAX_N`] non-zero
//! pairs the p-value comes from the exact null distribution of the positive
//! rank sum (all `2^n` sign assignments, counted by dynamic programming over
//! doubled ranks so average ranks stay integral). Beyond that a normal
//! approximation with tie and continuity corrections is used.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const EXACT_MAX_N: usize = 25;
pub const MIN_PAIRS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences that entered the test.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub method: TestMethod,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "paired samples of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n < MIN_PAIRS {
        return Err(Error::TooFewPairs(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p_value, method) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w_plus), TestMethod::Exact)
    } else {
        (normal_p(&abs, &ranks, w_plus), TestMethod::Normal)
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        p_value,
        method,
    })
}

fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    // Doubled ranks are integers even for average ranks of ties.
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let observed = (2.0 * w_plus).round() as usize;
    let total_assignments = (1u64 << ranks.len()) as f64;
    let lower: u64 = counts[..=observed].iter().sum();
    let upper: u64 = counts[observed..].iter().sum();
    let tail = lower.min(upper) as f64 / total_assignments;
    (2.0 * tail).min(1.0)
}

fn normal_p(abs: &[f64], ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = abs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_samples_are_too_few() {
        let a = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
        assert!(matches!(wilcoxon_signed_rank(&a, &a), Err(Error::TooFewPairs(0))));
        assert!(matches!(
            wilcoxon_signed_rank(&a, &a[..3]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn six_pair_example() {
        // differences 1.5, -0.3, 2.0, 0.8, 1.1, 0.4 -> ranks 5, 1, 6, 3, 4, 2;
        // W+ = 20. Only the sign sets with rank sum >= 20 ({1..6} and {2..6})
        // are as extreme on the upper side: p = 2 * 2 / 64.
        let a = [2.5, 0.7, 3.0, 1.8, 2.1, 1.4];
        let b = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.n, 6);
        assert_eq!(r.w_plus, 20.0);
        assert_eq!(r.method, TestMethod::Exact);
        assert!((r.p_value - 0.0625).abs() < 1e-12);
        let swapped = wilcoxon_signed_rank(&b, &a).unwrap();
        assert_eq!(swapped.p_value, r.p_value);
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..40).map(|i| i as f64 * 0.1 + 0.3).collect();
        let b: Vec<f64> = (0..40).map(|i| i as f64 * 0.1 + if i % 3 == 0 { 0.5 } else { 0.0 }).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, TestMethod::Normal);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }
}
