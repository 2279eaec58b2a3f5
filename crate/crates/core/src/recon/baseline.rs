//! Classical calibration: track the piston peak in each A-scan and map its
//! depth to force with a least-squares line.

use crate::error::{Error, Result};
use crate::recon::AScan;

/// Bins skipped at the start of the A-scan to avoid residual DC.
pub const DC_GUARD_BINS: usize = 3;

/// Peaks at or below this magnitude are treated as absent.
pub const PEAK_FLOOR: f64 = 1e-9;

/// Fractional depth bin of the dominant peak, refined with a 3-point
/// parabola through the argmax and its neighbors.
pub fn peak_displacement(ascan: &AScan) -> Result<f64> {
    let v = ascan.values();
    let (m, &peak) = v
        .iter()
        .enumerate()
        .skip(DC_GUARD_BINS)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(Error::NoPeak)?;
    if !(peak > PEAK_FLOOR) {
        return Err(Error::NoPeak);
    }
    if m + 1 >= v.len() {
        return Ok(m as f64);
    }
    let (y0, y1, y2) = (v[m - 1], v[m], v[m + 1]);
    let curvature = y0 - 2.0 * y1 + y2;
    if curvature >= 0.0 {
        return Ok(m as f64);
    }
    Ok(m as f64 + 0.5 * (y0 - y2) / curvature)
}

/// `force = slope * depth + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinearBaseline {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearBaseline {
    pub fn predict(&self, depth: f64) -> f64 {
        self.slope * depth + self.intercept
    }
}

/// Ordinary least squares over `(depth, force)` pairs.
pub fn fit_linear_baseline(pairs: &[(f64, f64)]) -> Result<LinearBaseline> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 points, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxx, sxy) = pairs.iter().fold((0.0, 0.0), |(sxx, sxy), &(x, y)| {
        let dx = x - mean_x;
        (sxx + dx * dx, sxy + dx * (y - mean_y))
    });
    if pairs.iter().all(|p| p.0 == pairs[0].0) || sxx == 0.0 {
        return Err(Error::DegenerateFit("all depths are identical".into()));
    }
    let slope = sxy / sxx;
    Ok(LinearBaseline {
        slope,
        intercept: mean_y - slope * mean_x,
    })
}
