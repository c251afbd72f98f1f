//! Browser demo: ε-gauge slices, NSW volume curves and heat-kernel slices for
//! the first Heisenberg group. Slices come back as a flat array
//! `[nx, nz, x0, dx, z0, dz, v(0,0), v(1,0), ...]` with x varying fastest.

use std::sync::Arc;

use wasm_bindgen::prelude::*;

use cclab_core::frames::Builtin;
use cclab_core::geodesy::gauge_heis_eps;
use cclab_core::heat::{h1_heat_lattice, heat_fd, identity, FdOptions};
use cclab_core::measure::nsw_volume;
use cclab_core::{build_builtin_frame, make_eps_frame};

const HEADER: usize = 6;

fn check_eps(eps: f64) -> Result<(), String> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(format!("ε must be finite and non-negative, got {eps}"))
    }
}

/// d_{G,ε}(0, (x, 0, z)) on an n×n grid over [-extent, extent]².
pub fn gauge_slice(eps: f64, extent: f64, n: usize) -> Result<Vec<f64>, String> {
    check_eps(eps)?;
    if !(extent > 0.0) || n < 2 || n > 1024 {
        return Err("need extent > 0 and 2 <= n <= 1024".into());
    }
    let d = 2.0 * extent / (n - 1) as f64;
    let mut out = Vec::with_capacity(HEADER + n * n);
    out.extend([n as f64, n as f64, -extent, d, -extent, d]);
    for j in 0..n {
        let z = -extent + j as f64 * d;
        for i in 0..n {
            let x = -extent + i as f64 * d;
            out.push(gauge_heis_eps(&[x, 0.0, z], eps));
        }
    }
    Ok(out)
}

/// NSW volume polynomial at the origin for each radius in `r`.
pub fn nsw_curve(eps: f64, r: &[f64]) -> Result<Vec<f64>, String> {
    check_eps(eps)?;
    let frame = Arc::new(build_builtin_frame(Builtin::Heisenberg1));
    let ef = make_eps_frame(frame, eps).map_err(|e| e.to_string())?;
    r.iter().map(|&r| nsw_volume(&ef, &[0.0; 3], r).map_err(|e| e.to_string())).collect()
}

/// Finite-difference heat kernel from the origin at time t, cut along y = 0.
pub fn heat_slice(eps: f64, t: f64, h: f64) -> Result<Vec<f64>, String> {
    check_eps(eps)?;
    if !(t > 0.0 && t <= 0.5) || !(h >= 0.05 && h <= 0.5) {
        return Err("need 0 < t <= 0.5 and 0.05 <= h <= 0.5".into());
    }
    let frame = Arc::new(build_builtin_frame(Builtin::Heisenberg1));
    let ef = make_eps_frame(frame, eps).map_err(|e| e.to_string())?;
    let lat = h1_heat_lattice(eps, t, h, 60).map_err(|e| e.to_string())?;
    let k = heat_fd(&ef, &identity(ef.p()), &lat, &[0.0; 3], t, &FdOptions::default()).map_err(|e| e.to_string())?;
    let snap = k.snapshot(t);
    let (nx, ny, nz) = (lat.counts[0], lat.counts[1], lat.counts[2]);
    let jy = ny / 2;
    let mut out = Vec::with_capacity(HEADER + nx * nz);
    out.extend([nx as f64, nz as f64, lat.lower[0], lat.spacing[0], lat.lower[2], lat.spacing[2]]);
    for kz in 0..nz {
        for ix in 0..nx {
            out.push(k.values[snap][lat.index(&[ix, jy, kz])]);
        }
    }
    Ok(out)
}

#[wasm_bindgen(js_name = gaugeSlice)]
pub fn gauge_slice_js(eps: f64, extent: f64, n: usize) -> Result<Vec<f64>, JsError> {
    gauge_slice(eps, extent, n).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = nswCurve)]
pub fn nsw_curve_js(eps: f64, r: Vec<f64>) -> Result<Vec<f64>, JsError> {
    nsw_curve(eps, &r).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = heatSlice)]
pub fn heat_slice_js(eps: f64, t: f64, h: f64) -> Result<Vec<f64>, JsError> {
    heat_slice(eps, t, h).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauge_slice_layout() {
        let s = gauge_slice(0.5, 1.0, 5).unwrap();
        assert_eq!(s.len(), HEADER + 25);
        // grid center is the origin
        assert_eq!(s[HEADER + 12], 0.0);
        assert!(gauge_slice(-1.0, 1.0, 5).is_err());
    }

    #[test]
    fn nsw_slopes() {
        // small balls: exponent 3 for ε > 0, 4 at ε = 0
        let r = [1e-3, 2e-3];
        let v = nsw_curve(0.5, &r).unwrap();
        assert!(((v[1] / v[0]).log2() - 3.0).abs() < 0.05);
        let v = nsw_curve(0.0, &r).unwrap();
        assert!(((v[1] / v[0]).log2() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn heat_slice_peaks_at_origin() {
        let s = heat_slice(0.5, 0.05, 0.2).unwrap();
        let (nx, nz) = (s[0] as usize, s[1] as usize);
        let v = &s[HEADER..];
        assert_eq!(v.len(), nx * nz);
        let max = v.iter().cloned().fold(0.0, f64::max);
        assert_eq!(v[(nz / 2) * nx + nx / 2], max);
    }
}
