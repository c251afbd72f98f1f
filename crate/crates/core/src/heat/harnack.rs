//! Harnack probe: sup over Q⁻ = B(x̄,ρ)×(t̄−8ρ², t̄−7ρ²) against inf over
//! Q⁺ = B(x̄,ρ)×(t̄−ρ², t̄) for a nonnegative solution.

use serde::Serialize;

use super::{heat_fd_from, CoeffMatrix, FdOptions};
use crate::error::{LabError, Result};
use crate::frames::EpsFrame;
use crate::lattice::Lattice;

#[derive(Debug, Clone, Serialize)]
pub struct Cylinders {
    pub rho: f64,
    pub xbar: Vec<f64>,
    pub tbar: f64,
    /// Sampled times per cylinder.
    pub samples: usize,
}

impl Cylinders {
    pub fn minus_times(&self) -> Vec<f64> {
        let r2 = self.rho * self.rho;
        ladder(self.tbar - 8.0 * r2, self.tbar - 7.0 * r2, self.samples)
    }

    pub fn plus_times(&self) -> Vec<f64> {
        let r2 = self.rho * self.rho;
        ladder(self.tbar - r2, self.tbar, self.samples)
    }
}

fn ladder(a: f64, b: f64, k: usize) -> Vec<f64> {
    let k = k.max(2);
    (0..k).map(|i| a + (b - a) * i as f64 / (k - 1) as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct HarnackReport {
    pub sup_minus: f64,
    pub mean_minus: f64,
    pub inf_plus: f64,
    pub ratio: f64,
    pub mean_ratio: f64,
    pub ball_nodes: usize,
}

/// Evolves `u0` with the finite-difference scheme and evaluates the ratio on
/// the nodes accepted by `in_ball`.
pub fn harnack_ratio(
    ef: &EpsFrame,
    a: &CoeffMatrix,
    lat: &Lattice,
    u0: Vec<f64>,
    cyl: &Cylinders,
    in_ball: &dyn Fn(&[f64]) -> bool,
) -> Result<HarnackReport> {
    if !(cyl.rho > 0.0) || cyl.tbar - 8.0 * cyl.rho * cyl.rho <= 0.0 {
        return Err(LabError::InvalidParameter("need ρ > 0 and t̄ > 8ρ²".into()));
    }
    if u0.iter().any(|v| *v < 0.0) {
        return Err(LabError::InvalidParameter("initial data must be nonnegative".into()));
    }
    let nodes: Vec<usize> = (0..lat.len()).filter(|&i| in_ball(&lat.point(i))).collect();
    if nodes.is_empty() {
        return Err(LabError::ResolutionTooCoarse(format!("no node in the ball of radius {}", cyl.rho)));
    }
    if nodes.iter().any(|&i| lat.is_boundary(i)) {
        return Err(LabError::OutOfDomain("cylinder ball touches the lattice boundary".into()));
    }
    let minus = cyl.minus_times();
    let plus = cyl.plus_times();
    let mut snaps = minus.clone();
    snaps.extend_from_slice(&plus);
    let opts = FdOptions { dt: None, snapshots: snaps, max_mass_loss: Some(1.0) };
    let k = heat_fd_from(ef, a, lat, u0, &cyl.xbar, cyl.tbar, &opts)?;
    let mut sup_minus: f64 = 0.0;
    let mut sum_minus = 0.0;
    let mut count_minus = 0usize;
    for &t in &minus {
        let s = k.snapshot(t);
        for &i in &nodes {
            sup_minus = sup_minus.max(k.values[s][i]);
            sum_minus += k.values[s][i];
            count_minus += 1;
        }
    }
    let mut inf_plus = f64::INFINITY;
    for &t in &plus {
        let s = k.snapshot(t);
        for &i in &nodes {
            inf_plus = inf_plus.min(k.values[s][i]);
        }
    }
    if inf_plus <= 1e-14 {
        return Err(LabError::DegenerateInfimum(inf_plus));
    }
    let mean_minus = sum_minus / count_minus as f64;
    Ok(HarnackReport {
        sup_minus,
        mean_minus,
        inf_plus,
        ratio: sup_minus / inf_plus,
        mean_ratio: mean_minus / inf_plus,
        ball_nodes: nodes.len(),
    })
}
