//! Order-fixed reductions and interval estimates.

use serde::{Deserialize, Serialize};

/// Pairwise (cascade) summation in index order. The split points depend
/// only on the length, so the result is reproducible bit for bit.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if v.len() <= BLOCK {
        return v.iter().fold(0.0, |a, b| a + b);
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(v) / v.len() as f64
    }
}

/// Sample mean with its standard error (sample standard deviation over √n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn of(v: &[f64]) -> MeanSe {
        let n = v.len();
        let m = mean(v);
        let se = if n < 2 {
            f64::INFINITY
        } else {
            let dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
        };
        MeanSe { mean: m, se, count: n }
    }

    /// `|mean − target| ≤ k·se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// Wilson score interval for a binomial proportion at `z` standard errors.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn pairwise_beats_naive_drift() {
        let v = vec![0.1; 1 << 20];
        let exact = 0.1 * (1u64 << 20) as f64;
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - exact).abs() <= (naive - exact).abs());
        assert!((pairwise_sum(&v) - exact).abs() < 1e-8);
    }

    #[test]
    fn mean_se_of_known_sample() {
        let s = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // Sample variance 5/3, se = sqrt(5/12).
        assert!((s.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!(s.within(2.0, 1.0));
        assert!(!s.within(0.0, 3.0));
    }

    #[test]
    fn wilson_contains_truth_and_clips() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && hi > 0.5);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        let (lo, hi) = wilson_interval(100, 100, 1.96);
        assert!(lo > 0.95 && hi > 1.0 - 1e-12);
        assert_eq!(wilson_interval(0, 0, 1.96), (0.0, 1.0));
    }
}
