use serde::Serialize;

use super::ErrorTable;
use crate::error::{ensure, Result};

/// Least-squares line through `(log₂ h, log₂ rms)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits the observed strong order using only rows with finite positive rms.
pub fn fit_order(table: &ErrorTable) -> Result<OrderFit> {
    fit_log2(table.rows.iter().map(|r| (r.h, r.rms_error)))
}

pub(crate) fn fit_log2(points: impl Iterator<Item = (f64, f64)>) -> Result<OrderFit> {
    let pts: Vec<(f64, f64)> = points
        .filter(|&(h, e)| h > 0.0 && e.is_finite() && e > 0.0)
        .map(|(h, e)| (h.log2(), e.log2()))
        .collect();
    ensure!(
        pts.len() >= 2,
        Fit,
        "need at least 2 finite positive errors, have {}",
        pts.len()
    );
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    ensure!(sxx > 0.0, Fit, "all step sizes are equal");
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(OrderFit {
        slope,
        intercept,
        r_squared,
        points: pts.len(),
    })
}
