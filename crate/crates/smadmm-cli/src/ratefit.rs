//! Log-log rate fitting: least squares on (ln K, ln residual). The dominant
//! theoretical decay of the best stationarity residual is K^(-2/3), so the
//! fitted slope of a healthy run sits near -2/3.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// (log K, log residual) pairs actually used.
    pub points: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Fits a line through (ln K, ln residual). Non-positive residuals cannot be
/// log-transformed and are excluded with a warning; at least three usable
/// points are required.
pub fn fit_rate(samples: &[(f64, f64)]) -> Result<RateFit, String> {
    let mut warnings = Vec::new();
    let mut points = Vec::new();
    for &(k, resid) in samples {
        if !(k > 0.0) {
            return Err(format!("horizon {k} must be positive"));
        }
        if resid > 0.0 && resid.is_finite() {
            points.push((k.ln(), resid.ln()));
        } else {
            warnings.push(format!("excluded non-positive residual {resid} at K = {k}"));
        }
    }
    if points.len() < 3 {
        return Err(format!(
            "rate fit needs at least 3 usable points, got {}",
            points.len()
        ));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    if sxx == 0.0 {
        return Err("all horizons coincide; slope is undefined".into());
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
        .sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let r_squared = if ss_tot <= f64::EPSILON * n {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points,
        warnings,
    })
}
