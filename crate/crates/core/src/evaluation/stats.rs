//! Multi-seed aggregation with Student-t confidence intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub mean: f64,
    /// Half-width of the two-sided 95% confidence interval of the mean.
    pub half_width: f64,
    pub seeds: usize,
    pub values: Vec<f64>,
}

/// Two-sided 95% quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

/// Mean and `t(0.975, n-1) * s / sqrt(n)` with `s` the sample standard
/// deviation. Needs at least two values.
pub fn aggregate_seeds(values: &[f64]) -> Result<AggregateResult> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Aggregation(format!(
            "confidence interval needs at least 2 values, got {n}"
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Aggregation(format!("non-finite value {v}")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let half_width = t_quantile_975(n - 1) * var.sqrt() / (n as f64).sqrt();
    Ok(AggregateResult {
        mean,
        half_width,
        seeds: n,
        values: values.to_vec(),
    })
}

impl AggregateResult {
    /// Percent rendering with two decimals, e.g. `86.06 ± 2.05`.
    pub fn render(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean * 100.0, self.half_width * 100.0)
    }
}

/// Renders a single-seed value, for which no interval exists.
pub fn render_single(value: f64) -> String {
    format!("{:.2} (n=1)", value * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn five_seed_example() {
        let r = aggregate_seeds(&[0.86, 0.84, 0.88, 0.85, 0.87]).unwrap();
        assert!((r.mean - 0.86).abs() < 1e-12);
        // s = sqrt(0.001 / 4), t(0.975, 4) = 2.7764
        let expect = 2.776445105 * (0.001f64 / 4.0).sqrt() / 5f64.sqrt();
        assert!((r.half_width - expect).abs() < 1e-8);
        assert!((r.half_width - 0.0196).abs() < 1e-4);
        assert_eq!(r.render(), "86.00 ± 1.96");
    }

    #[test]
    fn render_matches_table_format() {
        let r = AggregateResult {
            mean: 0.8606,
            half_width: 0.0205,
            seeds: 5,
            values: vec![],
        };
        assert_eq!(r.render(), "86.06 ± 2.05");
    }

    #[test]
    fn constant_values_have_zero_width() {
        let r = aggregate_seeds(&[0.7; 5]).unwrap();
        assert!((r.mean - 0.7).abs() < 1e-12);
        assert!(r.half_width.abs() < 1e-12);
    }

    #[test]
    fn needs_two_values() {
        assert!(matches!(aggregate_seeds(&[0.5]), Err(Error::Aggregation(_))));
        assert!(aggregate_seeds(&[]).is_err());
    }

    #[test]
    fn t_quantiles() {
        assert!((t_quantile_975(4) - 2.776).abs() < 1e-3);
        assert!((t_quantile_975(1) - 12.706).abs() < 1e-3);
        assert!((t_quantile_975(1000) - 1.962).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn scaling_is_linear(values in proptest::collection::vec(0.0f64..1.0, 2..8)) {
            let a = aggregate_seeds(&values).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * 100.0).collect();
            let b = aggregate_seeds(&scaled).unwrap();
            prop_assert!((b.mean - 100.0 * a.mean).abs() < 1e-9);
            prop_assert!((b.half_width - 100.0 * a.half_width).abs() < 1e-9);
        }

        #[test]
        fn adding_the_mean_never_widens(values in proptest::collection::vec(0.0f64..1.0, 2..8)) {
            let a = aggregate_seeds(&values).unwrap();
            let mut more = values.clone();
            more.push(a.mean);
            let b = aggregate_seeds(&more).unwrap();
            prop_assert!(b.half_width <= a.half_width + 1e-12);
        }
    }
}
