//! Replicate aggregation: means, interpolated percentiles and simple fits.

use std::path::Path;

use mdes_core::io::write_rows;
use mdes_core::linalg::compensated_sum;
use serde::Serialize;

use crate::error::{config_err, Result};

/// Percentile `p ∈ [0, 1]` of sorted values by linear interpolation at rank
/// `p (N − 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let rank = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = rank - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    quantile_sorted(&sorted(values), p)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    compensated_sum(values.iter().cloned()) / values.len() as f64
}

/// Standard error of the mean (sample standard deviation over `√N`).
pub fn std_error(values: &[f64]) -> f64 {
    let k = values.len();
    if k < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss = compensated_sum(values.iter().map(|v| (v - m) * (v - m)));
    (ss / (k - 1) as f64).sqrt() / (k as f64).sqrt()
}

/// Ordinary least-squares line `y ≈ a + b x`; returns `(b, a)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let sxy = compensated_sum(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)));
    let sxx = compensated_sum(x.iter().map(|a| (a - mx) * (a - mx)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Pointwise mean and 10th/90th percentiles of replicate series on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateSeries {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub p10: Vec<f64>,
    pub p90: Vec<f64>,
}

impl AggregateSeries {
    pub fn from_replicates(x: Vec<f64>, replicates: &[Vec<f64>]) -> Result<Self> {
        if replicates.is_empty() {
            return Err(config_err("need at least one replicate"));
        }
        if let Some(bad) = replicates.iter().find(|r| r.len() != x.len()) {
            return Err(config_err(format!(
                "replicate series has {} points, grid has {}",
                bad.len(),
                x.len()
            )));
        }
        let k = x.len();
        let (mut m, mut lo, mut hi) = (
            Vec::with_capacity(k),
            Vec::with_capacity(k),
            Vec::with_capacity(k),
        );
        for i in 0..k {
            let column: Vec<f64> = replicates.iter().map(|r| r[i]).collect();
            let s = sorted(&column);
            // Rounding in the sum can push the mean a hair outside the sample range.
            m.push(mean(&s).clamp(s[0], s[s.len() - 1]));
            lo.push(quantile_sorted(&s, 0.1));
            hi.push(quantile_sorted(&s, 0.9));
        }
        Ok(AggregateSeries {
            x,
            mean: m,
            p10: lo,
            p90: hi,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Writes several series sharing one grid as `x, {name}_mean, {name}_p10, {name}_p90, …`.
pub fn write_series_csv(
    path: &Path,
    x_name: &str,
    columns: &[(&str, &AggregateSeries)],
) -> Result<()> {
    let Some((_, first)) = columns.first() else {
        return Err(config_err("no series to write"));
    };
    if columns.iter().any(|(_, s)| s.x != first.x) {
        return Err(config_err("series written together must share a grid"));
    }
    let mut names = vec![x_name.to_string()];
    for (name, _) in columns {
        for suffix in ["mean", "p10", "p90"] {
            names.push(format!("{name}_{suffix}"));
        }
    }
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let rows = (0..first.len()).map(|i| {
        let mut row = vec![first.x[i]];
        for (_, s) in columns {
            row.extend([s.mean[i], s.p10[i], s.p90[i]]);
        }
        row
    });
    write_rows(std::fs::File::create(path)?, &header, rows)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_interpolate_linearly() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_eq!(median(&v), 3.0);
        assert!((quantile(&v, 0.1) - 1.4).abs() < 1e-15);
        assert!((quantile(&v, 0.9) - 4.6).abs() < 1e-15);
        assert_eq!(median(&[1.0, 2.0]), 1.5);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn series_bands_are_ordered() {
        let reps = vec![
            vec![1.0, 5.0],
            vec![2.0, 4.0],
            vec![3.0, 3.0],
            vec![0.1, 0.1],
        ];
        let s = AggregateSeries::from_replicates(vec![0.0, 1.0], &reps).unwrap();
        for i in 0..2 {
            assert!(s.p10[i] <= s.mean[i] && s.mean[i] <= s.p90[i]);
        }
        assert_eq!(s.mean[0], 1.525);
        assert!(AggregateSeries::from_replicates(vec![0.0], &reps).is_err());
        let flat = AggregateSeries::from_replicates(vec![0.0], &vec![vec![0.1]; 3]).unwrap();
        assert_eq!(flat.mean[0], 0.1);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let (b, a) = fit_line(&x, &y);
        assert!((b + 0.5).abs() < 1e-14 && (a - 2.0).abs() < 1e-14);
        assert!((std_error(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
