//! Per-evaluation convergence traces shared by the integration methods.

use serde::{Deserialize, Serialize};

/// One point of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// Integrand (or likelihood) evaluations spent so far.
    pub evaluations: usize,
    pub estimate: f64,
    /// Posterior standard deviation or Monte Carlo standard error.
    pub std: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
///
/// Pairs with a non-positive coordinate are skipped.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Fraction of `values` lying in `[-1, 1]`.
pub fn unit_coverage(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().filter(|v| v.abs() <= 1.0).count() as f64 / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((loglog_slope(&x, &y).unwrap() + 1.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&[1.0], &[1.0]), None);
    }

    #[test]
    fn coverage_counts_inclusive() {
        assert_eq!(unit_coverage(&[-1.0, 0.5, 1.0, 2.0]), 0.75);
    }
}
