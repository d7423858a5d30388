//! Small statistics helpers shared by tests, the self-test and evaluation.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pairwise summation; the result does not depend on how callers shard the
/// input as long as the shard order is fixed.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pearson chi-square goodness of fit. Returns `(statistic, p_value)`.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> (f64, f64) {
    assert_eq!(counts.len(), probs.len());
    let total: u64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let expected = p * total as f64;
            (c as f64 - expected).powi(2) / expected
        })
        .sum();
    let dof = (counts.len() - 1).max(1) as f64;
    let p = 1.0 - ChiSquared::new(dof).expect("dof > 0").cdf(stat);
    (stat, p)
}

/// Gaussian tail function Q(x) = P(N(0,1) > x).
pub fn q_function(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_matches_table() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        assert!((q_function(1.0) - 0.158_655_253_9).abs() < 1e-9);
        assert!((q_function(2.0) - 0.022_750_131_9).abs() < 1e-9);
    }

    #[test]
    fn chi_square_flags_bias() {
        let (_, p) = chi_square(&[250, 250, 250, 250], &[0.25; 4]);
        assert!(p > 0.99);
        let (_, p) = chi_square(&[400, 200, 200, 200], &[0.25; 4]);
        assert!(p < 1e-4);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), v.iter().sum::<f64>());
    }
}
