//! d_ε distances, gauge quasi-norms and exponential coordinates.

mod control;
mod expcoords;
mod graph;

use serde::Serialize;

pub use control::{dist_control, ControlOptions};
pub use expcoords::{box_ball_membership, exp_coords, quasi_norm_equiregular, ExpCoords};
pub use graph::{DistanceField, DistanceGraph, GraphOptions};

pub use crate::lattice::Lattice;

use crate::error::Result;
use crate::frames::EpsFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMethod {
    LatticeDijkstra,
    ControlOpt,
    GaugeProxy,
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceResult {
    pub value: f64,
    pub method: DistanceMethod,
    /// True when the value is the length of an admissible path.
    pub upper_bound_flag: bool,
    pub witness_path: Option<Vec<Vec<f64>>>,
}

/// Shortest path on the lattice graph of `ef`. Builds the graph on every
/// call; use [`DistanceGraph`] directly for repeated queries.
pub fn dist_lattice(ef: &EpsFrame, lat: &Lattice, x: &[f64], y: &[f64]) -> Result<DistanceResult> {
    lat.check_contains(x)?;
    lat.check_contains(y)?;
    if x == y {
        return Ok(DistanceResult {
            value: 0.0,
            method: DistanceMethod::LatticeDijkstra,
            upper_bound_flag: true,
            witness_path: Some(vec![x.to_vec()]),
        });
    }
    let graph = DistanceGraph::build(ef, lat, &GraphOptions::default())?;
    graph.distance(x, y)
}

/// Heisenberg product (x)(y).
pub fn heis_mul(x: &[f64], y: &[f64]) -> [f64; 3] {
    [x[0] + y[0], x[1] + y[1], x[2] + y[2] - (x[1] * y[0] - x[0] * y[1])]
}

pub fn heis_inv(x: &[f64]) -> [f64; 3] {
    [-x[0], -x[1], -x[2]]
}

/// Homogeneous gauge ((x1²+x2²)² + x3²)^{1/4}.
pub fn gauge_heis(x: &[f64]) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1];
    (r2 * r2 + x[2] * x[2]).sqrt().sqrt()
}

/// Regularized gauge (x1²+x2²+min(|x3|, ε⁻²x3²))^{1/2}; ε = 0 gives the
/// sub-Riemannian branch |x3|.
pub fn gauge_heis_eps(x: &[f64], eps: f64) -> f64 {
    let z = x[2].abs();
    let v = if eps > 0.0 { z.min(z * z / (eps * eps)) } else { z };
    (x[0] * x[0] + x[1] * x[1] + v).sqrt()
}

/// d_{G,ε}(x, y) = N_ε(y⁻¹x).
pub fn gauge_dist_heis(x: &[f64], y: &[f64], eps: f64) -> f64 {
    gauge_heis_eps(&heis_mul(&heis_inv(y), x), eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauge_values() {
        assert_eq!(gauge_heis(&[1.0, 0.0, 0.0]), 1.0);
        assert!((gauge_heis(&[0.0, 0.0, 3.0]) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(gauge_heis_eps(&[0.0, 0.0, 4.0], 1.0), 2.0);
        assert_eq!(gauge_heis_eps(&[0.0, 0.0, 0.25], 0.0), 0.5);
        // branch switch at |x3| = ε²: both branches agree
        let e = 0.3;
        assert!((gauge_heis_eps(&[0.0, 0.0, e * e], e) - e).abs() < 1e-15);
    }

    #[test]
    fn group_law_inverse() {
        let x = [0.3, -0.2, 0.9];
        let e = heis_mul(&heis_inv(&x), &x);
        assert!(e.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(gauge_dist_heis(&x, &x, 0.1), 0.0);
    }

    #[test]
    fn gauge_nonincreasing_in_eps() {
        let x = [0.1, 0.2, -0.3];
        let mut last = f64::INFINITY;
        for e in [0.0, 0.05, 0.1, 0.5, 1.0, 2.0] {
            let g = gauge_heis_eps(&x, e);
            assert!(g <= last + 1e-15);
            last = g;
        }
    }
}
