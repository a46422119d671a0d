//! Empirical cumulative distribution functions over user drops.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    /// Evenly spaced grid from the smallest to the largest sample.
    pub values: Vec<f64>,
    /// `P(X ≤ value)` at each grid point.
    pub cdf: Vec<f64>,
    sorted: Vec<f64>,
}

impl CdfTable {
    /// Right-continuous empirical CDF at `x`.
    pub fn evaluate(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// `sup_x |F(x) − G(x)|` over the samples of both tables.
    pub fn sup_distance(&self, other: &CdfTable) -> f64 {
        self.sorted
            .iter()
            .chain(&other.sorted)
            .map(|&x| (self.evaluate(x) - other.evaluate(x)).abs())
            .fold(0.0, f64::max)
    }
}

/// Empirical CDF of `values` tabulated on `grid_points` evenly spaced points.
pub fn compute_cdf(values: &[f64], grid_points: usize) -> Result<CdfTable> {
    if values.is_empty() {
        return Err(invalid("cannot build a CDF from no samples"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(invalid("CDF samples must not be NaN"));
    }
    if grid_points == 0 {
        return Err(invalid("CDF grid needs at least one point"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let grid: Vec<f64> = if lo == hi || grid_points == 1 {
        vec![hi]
    } else {
        let step = (hi - lo) / (grid_points - 1) as f64;
        (0..grid_points)
            .map(|i| if i + 1 == grid_points { hi } else { lo + i as f64 * step })
            .collect()
    };
    let mut table = CdfTable {
        values: grid,
        cdf: Vec::new(),
        sorted,
    };
    table.cdf = table.values.iter().map(|&x| table.evaluate(x)).collect();
    Ok(table)
}
