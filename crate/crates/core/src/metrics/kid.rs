use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Gaussian kernel `exp(-|x - y|^2 / (2 sigma^2))`.
pub fn rbf_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::config(format!("RBF bandwidth must be > 0, got {sigma}")));
    }
    if x.len() != y.len() {
        return Err(Error::Dimension(x.len(), y.len()));
    }
    Ok((-sq_dist(x, y) / (2.0 * sigma * sigma)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KidEstimator {
    /// All pairs including `i == j`; the cross term is scaled by `2 / n^2`.
    #[default]
    Paper,
    /// Diagonal self-similarities excluded, cross term scaled by `2 / (n m)`.
    Unbiased,
}

fn kernel_sum(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64, skip_diagonal: bool) -> f64 {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut total = 0.0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            total += (-sq_dist(x, y) * inv).exp();
        }
    }
    total
}

/// Kernel distance between real features `x` and generated features `y`.
pub fn kid(x: &[Vec<f64>], y: &[Vec<f64>], sigma: f64, estimator: KidEstimator) -> Result<f64> {
    let (n, m) = (x.len(), y.len());
    if n == 0 || m == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if !(sigma > 0.0) {
        return Err(Error::config(format!("RBF bandwidth must be > 0, got {sigma}")));
    }
    let d = x[0].len();
    if let Some(v) = x.iter().chain(y).find(|v| v.len() != d) {
        return Err(Error::Dimension(d, v.len()));
    }
    let (nf, mf) = (n as f64, m as f64);
    match estimator {
        KidEstimator::Paper => Ok(kernel_sum(x, x, sigma, false) / (nf * nf)
            - 2.0 * kernel_sum(x, y, sigma, false) / (nf * nf)
            + kernel_sum(y, y, sigma, false) / (mf * mf)),
        KidEstimator::Unbiased => {
            if n < 2 || m < 2 {
                return Err(Error::TooFewSamples {
                    needed: 2,
                    got: n.min(m),
                });
            }
            Ok(kernel_sum(x, x, sigma, true) / (nf * (nf - 1.0))
                + kernel_sum(y, y, sigma, true) / (mf * (mf - 1.0))
                - 2.0 * kernel_sum(x, y, sigma, false) / (nf * mf))
        }
    }
}

/// Median pairwise Euclidean distance over the pooled sample; falls back to
/// `1.0` when every point coincides.
pub fn median_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let k = dists.len();
    let med = if k % 2 == 1 {
        dists[k / 2]
    } else {
        0.5 * (dists[k / 2 - 1] + dists[k / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn kernel_values() {
        let x = [1.0, 2.0];
        assert_eq!(rbf_kernel(&x, &x, 0.5).unwrap(), 1.0);
        // |x - y|^2 = 2 sigma^2 with sigma = 1.
        let y = [2.0, 3.0];
        assert!((rbf_kernel(&x, &y, 1.0).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert!(rbf_kernel(&x, &y, 0.0).is_err());
        assert!(rbf_kernel(&x, &y, -1.0).is_err());
    }

    #[test]
    fn kernel_decays_monotonically() {
        let mut prev = 1.0;
        for k in 1..40 {
            let v = rbf_kernel(&[0.0], &[k as f64 * 0.5], 1.0).unwrap();
            assert!(v < prev && v > 0.0);
            prev = v;
        }
        assert!(prev < 1e-40);
    }

    #[test]
    fn paper_form_vanishes_on_identical_sets() {
        let mut rng = seed::rng(1);
        let x: Vec<Vec<f64>> = (0..20).map(|_| seed::normals(&mut rng, 4)).collect();
        assert_eq!(kid(&x, &x, 1.3, KidEstimator::Paper).unwrap(), 0.0);
    }

    #[test]
    fn single_points_expand_by_hand() {
        let x = vec![vec![0.0, 1.0]];
        let y = vec![vec![1.0, -1.0]];
        let k = rbf_kernel(&x[0], &y[0], 2.0).unwrap();
        let v = kid(&x, &y, 2.0, KidEstimator::Paper).unwrap();
        assert!((v - (2.0 - 2.0 * k)).abs() < 1e-12);
        assert!(kid(&x, &y, 2.0, KidEstimator::Unbiased).is_err());
    }

    #[test]
    fn empty_sets_are_errors() {
        let x = vec![vec![0.0]];
        assert!(kid(&x, &[], 1.0, KidEstimator::Paper).is_err());
        assert!(kid(&[], &x, 1.0, KidEstimator::Paper).is_err());
    }

    #[test]
    fn median_bandwidth_of_collinear_points() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = vec![vec![3.0]];
        // Distances 1, 3, 2.
        assert_eq!(median_bandwidth(&x, &y), 2.0);
        assert_eq!(median_bandwidth(&[vec![1.0]], &[vec![1.0]]), 1.0);
    }
}
