//! Log-log regression of sweep output.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    /// log of the prefactor.
    pub intercept: f64,
    pub r_squared: f64,
    /// Points actually used.
    pub points: usize,
}

impl ScalingFit {
    pub fn prefactor(&self) -> f64 {
        self.intercept.exp()
    }

    pub fn predict(&self, x: f64) -> f64 {
        self.prefactor() * x.powf(self.slope)
    }
}

/// Least-squares fit of log y = intercept + slope · log x.
///
/// Points with nonpositive or non-finite coordinates are dropped with a
/// warning; at least three must remain.
pub fn fit_scaling(xs: &[f64], ys: &[f64]) -> Result<ScalingFit> {
    if xs.len() != ys.len() {
        return Err(Error::SizeMismatch(format!("{} abscissae, {} ordinates", xs.len(), ys.len())));
    }
    let mut pts = Vec::with_capacity(xs.len());
    for (&x, &y) in xs.iter().zip(ys) {
        if x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite() {
            pts.push((x.ln(), y.ln()));
        } else {
            log::warn!("fit_scaling: dropping point ({x}, {y})");
        }
    }
    if pts.len() < 3 {
        return Err(Error::Parameter(format!("need at least 3 positive points, have {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("all abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ScalingFit { slope, intercept, r_squared, points: pts.len() })
}
