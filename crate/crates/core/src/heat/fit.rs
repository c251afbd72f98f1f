//! Gaussian envelopes C⁻¹e^{−c_l d²/t} ≤ P·|B(√t)| ≤ C e^{−c_u d²/t}.

use serde::Serialize;

use super::KernelField;
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct GaussianFit {
    pub eps: f64,
    pub t: f64,
    pub c_upper: f64,
    pub c_lower: f64,
    pub c_exp_upper: f64,
    pub c_exp_lower: f64,
    /// Least-squares decay rate b in log(P·V) ≈ a − b d²/t.
    pub rate: f64,
    pub intercept: f64,
    /// Single constant C with C⁻¹e^{−C d²/t} ≤ P·V ≤ C e^{−d²/(C t)} on the fit region.
    pub c_lambda: f64,
    pub fit_residual: f64,
    pub points: usize,
    pub bracketed: f64,
}

/// Relative spread of the envelope exponents around the fitted rate.
pub const MARGIN: f64 = 0.15;

fn quantile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Fits snapshot `snap` of the kernel; `distances[i]` is d_ε(y, node i) and
/// `volume` is |B_ε(y, √t)|.
pub fn gaussian_fit(kernel: &KernelField, snap: usize, distances: &[f64], volume: f64, eps: f64) -> Result<GaussianFit> {
    let lat = &kernel.lat;
    if distances.len() != lat.len() {
        return Err(LabError::InvalidParameter("distance table length differs from lattice".into()));
    }
    if !(volume > 0.0) {
        return Err(LabError::InvalidParameter("ball volume must be positive".into()));
    }
    let t = kernel.times[snap];
    let u = &kernel.values[snap];
    let reach = 3.0 * t.sqrt();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..lat.len() {
        let d = distances[i];
        if !d.is_finite() || d > reach || u[i] <= 1e-12 || lat.boundary_depth(i) < 4 {
            continue;
        }
        xs.push(d * d / t);
        ys.push((u[i] * volume).ln());
    }
    if xs.len() < 50 {
        return Err(LabError::InsufficientData(xs.len()));
    }
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(LabError::DegenerateDenominator(sxx));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rate = -slope;
    if !(rate > 0.0) {
        return Err(LabError::InvalidParameter(format!("kernel does not decay on the fit region (rate {rate})")));
    }
    let resid = (xs.iter().zip(&ys).map(|(x, y)| (y - intercept + rate * x).powi(2)).sum::<f64>() / k).sqrt();
    let (cu, cl) = ((1.0 - MARGIN) * rate, (1.0 + MARGIN) * rate);
    let mut up: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y + cu * x).collect();
    let mut lo: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y + cl * x).collect();
    let c_upper = quantile(&mut up, 0.995).exp();
    // a lower envelope never needs to start above the upper one
    let c_lower = quantile(&mut lo, 0.005).exp().min(c_upper);
    let inside = xs
        .iter()
        .zip(&ys)
        .filter(|(x, y)| {
            let v = y.exp();
            v <= c_upper * (-cu * *x).exp() * (1.0 + 1e-12) && v >= c_lower * (-cl * *x).exp() * (1.0 - 1e-12)
        })
        .count();
    let c_lambda = c_upper.max(1.0 / c_lower).max(cl).max(1.0 / cu);
    Ok(GaussianFit {
        eps,
        t,
        c_upper,
        c_lower,
        c_exp_upper: cu,
        c_exp_lower: cl,
        rate,
        intercept,
        c_lambda,
        fit_residual: resid,
        points: xs.len(),
        bracketed: inside as f64 / k,
    })
}
