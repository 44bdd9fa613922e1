use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{quantile_sorted, sample_std};

pub const GRID_POINTS: usize = 512;

/// The grid extends this many bandwidths past the data range on each side.
pub const GRID_PAD_BANDWIDTHS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityCurve {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    /// Grid location of the largest density value.
    pub fn mode(&self) -> f64 {
        let mut best = 0;
        for (i, &d) in self.density.iter().enumerate() {
            if d > self.density[best] {
                best = i;
            }
        }
        self.grid[best]
    }
}

/// Silverman's rule of thumb: 0.9 * min(sd, IQR / 1.34) * n^(-1/5).
///
/// Falls back to the standard deviation alone when the IQR is zero.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let sd = sample_std(values);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (values.len() as f64).powf(-0.2)
}

/// Gaussian kernel density estimate at a single point.
pub fn kde_at(values: &[f64], bandwidth: f64, x: f64) -> f64 {
    let norm = 1.0 / ((2.0 * PI).sqrt() * bandwidth * values.len() as f64);
    values
        .iter()
        .map(|v| {
            let u = (x - v) / bandwidth;
            (-0.5 * u * u).exp()
        })
        .sum::<f64>()
        * norm
}

/// Gaussian KDE on a 512-point grid spanning the data range padded by four
/// bandwidths. The bandwidth defaults to Silverman's rule.
pub fn kde(values: &[f64], bandwidth: Option<f64>) -> Result<DensityCurve> {
    if values.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "KDE needs at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite value".into()));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::DegenerateData("all values identical".into()));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::Config(format!("bandwidth {h} must be positive"))),
        None => silverman_bandwidth(values),
    };
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - GRID_PAD_BANDWIDTHS * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + GRID_PAD_BANDWIDTHS * h;
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| lo + step * i as f64).collect();
    let density = grid.iter().map(|&x| kde_at(values, h, x)).collect();
    Ok(DensityCurve {
        grid,
        density,
        bandwidth: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_kernel_peak() {
        assert!((kde_at(&[0.0], 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn identical_values_rejected() {
        assert!(matches!(kde(&[0.3, 0.3, 0.3], None), Err(Error::DegenerateData(_))));
        assert!(matches!(kde(&[0.3], None), Err(Error::DegenerateData(_))));
        assert!(kde(&[0.3, 0.4], Some(-1.0)).is_err());
    }

    #[test]
    fn peak_near_cluster() {
        let values: Vec<f64> = (0..50).map(|i| 0.7 + 1e-4 * ((i % 7) as f64 - 3.0)).collect();
        let curve = kde(&values, None).unwrap();
        assert!((curve.mode() - 0.7).abs() < 1e-3);
        assert_eq!(curve.grid.len(), GRID_POINTS);
        assert!((curve.integral() - 1.0).abs() < 0.02);
    }

    #[test]
    fn silverman_reference_value() {
        // sd = sqrt(2.5), IQR = 2 -> min(1.5811, 1.4925) = 1.4925; 0.9 * 1.4925 * 5^-0.2
        let h = silverman_bandwidth(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let expected = 0.9 * (2.0 / 1.34) * 5f64.powf(-0.2);
        assert!((h - expected).abs() < 1e-12);
    }
}
